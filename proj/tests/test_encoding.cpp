#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "neurove/encoding.hpp"

using namespace neurove;

namespace {

WindowSpec small_spec() {
    WindowSpec spec;
    spec.window_duration = 0.01;
    spec.n_bins = 4;
    spec.t_steps = 3;
    spec.sensor_h = 16;
    spec.sensor_w = 16;
    return spec;
}

std::vector<Event> random_events(std::size_t n, const WindowSpec& spec, std::uint64_t seed,
                                 double overrun = 1.0) {
    std::mt19937_64 rng(seed);
    const auto span_us = static_cast<std::uint64_t>(spec.window_duration * spec.t_steps * 1e6 * overrun);
    std::uniform_int_distribution<std::uint64_t> t_dist(0, span_us);
    std::uniform_int_distribution<int> x_dist(0, static_cast<int>(spec.sensor_w) - 1);
    std::uniform_int_distribution<int> y_dist(0, static_cast<int>(spec.sensor_h) - 1);
    std::bernoulli_distribution p_dist(0.5);
    std::vector<Event> events;
    for (std::size_t i = 0; i < n; ++i)
        events.push_back(Event{t_dist(rng), static_cast<std::uint16_t>(x_dist(rng)),
                               static_cast<std::uint16_t>(y_dist(rng)),
                               static_cast<std::int8_t>(p_dist(rng) ? 1 : -1)});
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    return events;
}

}  // namespace

TEST_CASE("empty stream yields empty groups") {
    const WindowSpec spec = small_spec();
    const BinnedEvents groups = bin_events({}, spec);
    CHECK(groups.assigned == 0);
    CHECK(groups.dropped == 0);
    for (const auto& g : groups.groups) CHECK(g.empty());
}

TEST_CASE("single event at t0 lands in window 0 bin 0") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events{Event{5000, 3, 5, 1}};
    const BinnedEvents groups = bin_events(events, spec);
    CHECK(groups.assigned == 1);
    CHECK(groups.group(0, 0, 1).size() == 1);
}

TEST_CASE("uniform 1 kHz train over 10 ms with 5 bins gives 2 events per bin") {
    WindowSpec spec;
    spec.window_duration = 0.01;
    spec.n_bins = 5;
    spec.t_steps = 1;
    spec.sensor_h = spec.sensor_w = 8;
    std::vector<Event> events;
    for (int k = 0; k < 10; ++k) events.push_back(Event{static_cast<std::uint64_t>(k) * 1000, 1, 1, 1});
    const BinnedEvents groups = bin_events(events, spec);
    // brute-force assignment oracle over the synthetic train
    std::vector<std::size_t> expected(5, 0);
    for (int k = 0; k < 10; ++k) expected[static_cast<std::size_t>((k * 1000) / 2000)] += 1;
    for (std::size_t bin = 0; bin < 5; ++bin) {
        CHECK(expected[bin] == 2);
        CHECK(groups.group(0, bin, 1).size() == expected[bin]);
    }
}

TEST_CASE("unsorted input is rejected") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events{Event{100, 0, 0, 1}, Event{50, 0, 0, 1}};
    CHECK_THROWS_AS(bin_events(events, spec), std::invalid_argument);
}

TEST_CASE("partition: every in-span event in exactly one group, the rest counted") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events = random_events(5000, spec, 31, 1.4);
    const BinnedEvents groups = bin_events(events, spec, 0);
    std::size_t grouped = 0;
    for (const auto& g : groups.groups) grouped += g.size();
    CHECK(grouped == groups.assigned);
    CHECK(groups.assigned + groups.dropped == events.size());
    CHECK(groups.dropped > 0);  // 1.4x overrun guarantees out-of-span events
}

TEST_CASE("polarity channel rule and bin-major interleave") {
    const WindowSpec spec = small_spec();
    // single positive event in bin 2 -> channel 2*2+1 = 5
    const std::uint64_t bin_us = static_cast<std::uint64_t>(spec.bin_duration() * 1e6);
    const std::vector<Event> events{Event{2 * bin_us + 1, 3, 5, 1}};
    const SpikeTensor st = encode_polarity(bin_events(events, spec, 0), spec);
    CHECK(st.popcount() == 1);
    CHECK(st.at(0, 0, 5, 5, 3) == 1);
    // negative polarity goes to the even channel
    const std::vector<Event> neg{Event{2 * bin_us + 1, 3, 5, -1}};
    const SpikeTensor st2 = encode_polarity(bin_events(neg, spec, 0), spec);
    CHECK(st2.at(0, 0, 4, 5, 3) == 1);
}

TEST_CASE("occupancy is idempotent") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events{Event{10, 2, 2, 1}, Event{20, 2, 2, 1}, Event{30, 2, 2, 1}};
    const SpikeTensor st = encode_polarity(bin_events(events, spec, 0), spec);
    CHECK(st.popcount() == 1);
}

TEST_CASE("distinct cells give popcount equal to the event count") {
    const WindowSpec spec = small_spec();
    // brute-force count over random events, dedup on (pixel, global bin, polarity)
    const std::vector<Event> events = random_events(3000, spec, 77, 0.99);
    const BinnedEvents groups = bin_events(events, spec, 0);
    const SpikeTensor st = encode_polarity(groups, spec);
    std::set<std::tuple<std::uint64_t, int, int, int>> cells;
    const double bin_us = spec.bin_duration() * 1e6;
    for (const Event& e : events) {
        const auto gbin = static_cast<std::uint64_t>(e.t_us / bin_us);
        if (gbin >= spec.t_steps * spec.n_bins) continue;
        cells.insert({gbin, e.x, e.y, e.p});
    }
    CHECK(st.popcount() == cells.size());
    CHECK(st.popcount() <= events.size());
}

TEST_CASE("events with identical timestamps encode identically under permutation") {
    const WindowSpec spec = small_spec();
    std::vector<Event> events{Event{500, 1, 1, 1}, Event{500, 2, 2, -1}, Event{500, 3, 3, 1}};
    const SpikeTensor a = encode_polarity(bin_events(events, spec, 0), spec);
    std::swap(events[0], events[2]);
    const SpikeTensor b = encode_polarity(bin_events(events, spec, 0), spec);
    CHECK(a.data == b.data);
}

TEST_CASE("out-of-bounds coordinates are rejected at encode time") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events{Event{0, 100, 0, 1}};
    CHECK_THROWS_AS(encode_polarity(bin_events(events, spec, 0), spec), std::invalid_argument);
}

TEST_CASE("batching stacks along B and checks shapes") {
    const WindowSpec spec = small_spec();
    const SpikeTensor one = encode_polarity(bin_events(random_events(200, spec, 5), spec, 0), spec);
    std::vector<SpikeTensor> single{one};
    const SpikeTensor b1 = batch_samples(single);
    CHECK(b1.batch == 1);
    CHECK(b1.data == one.data);

    std::vector<SpikeTensor> three{one, one, one};
    const SpikeTensor b3 = batch_samples(three);
    CHECK(b3.batch == 3);
    for (std::size_t t = 0; t < b3.t_steps; ++t)
        for (std::size_t c = 0; c < b3.channels; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                CHECK(b3.at(t, 2, c, y, 3) == one.at(t, 0, c, y, 3));

    WindowSpec other = spec;
    other.t_steps = 2;
    const SpikeTensor short_sample = encode_polarity(bin_events(random_events(50, other, 6), other, 0), other);
    std::vector<SpikeTensor> bad{one, short_sample};
    CHECK_THROWS_AS(batch_samples(bad), std::invalid_argument);
}

TEST_CASE("text and binary event formats round trip byte-stably") {
    const WindowSpec spec = small_spec();
    const std::vector<Event> events = random_events(500, spec, 13);

    std::ostringstream text1;
    write_events_text(text1, events);
    std::istringstream rt(text1.str());
    const std::vector<Event> from_text = read_events_text(rt);
    CHECK(from_text == events);
    std::ostringstream text2;
    write_events_text(text2, from_text);
    CHECK(text1.str() == text2.str());

    std::ostringstream bin1(std::ios::binary);
    write_events_binary(bin1, events);
    std::istringstream rb(bin1.str(), std::ios::binary);
    const std::vector<Event> from_bin = read_events_binary(rb);
    CHECK(from_bin == events);
    std::ostringstream bin2(std::ios::binary);
    write_events_binary(bin2, from_bin);
    CHECK(bin1.str() == bin2.str());
}

TEST_CASE("text format parses the documented example and rejects garbage") {
    std::istringstream is("100 3 5 1\n");
    const std::vector<Event> events = read_events_text(is);
    REQUIRE(events.size() == 1);
    CHECK(events[0].t_us == 100);
    CHECK(events[0].x == 3);
    CHECK(events[0].y == 5);
    CHECK(events[0].p == 1);

    std::istringstream bad("100 3 5 2\n");
    CHECK_THROWS(read_events_text(bad));
    std::istringstream malformed("abc\n");
    CHECK_THROWS(read_events_text(malformed));
    std::istringstream truncated_bin("EVT1abc", std::ios::binary);
    CHECK_THROWS(read_events_binary(truncated_bin));
}
