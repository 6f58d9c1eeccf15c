#include "neurove/encoding.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace neurove {

void WindowSpec::validate() const {
    if (!(window_duration > 0.0)) throw std::invalid_argument("WindowSpec: window_duration must be > 0");
    if (n_bins < 1) throw std::invalid_argument("WindowSpec: n_bins must be >= 1");
    if (t_steps < 1) throw std::invalid_argument("WindowSpec: t_steps must be >= 1");
    if (sensor_h == 0 || sensor_w == 0) throw std::invalid_argument("WindowSpec: sensor dims must be positive");
}

SpikeTensor SpikeTensor::zeros(std::size_t t, std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    SpikeTensor st;
    st.t_steps = t;
    st.batch = b;
    st.channels = c;
    st.height = h;
    st.width = w;
    st.data.assign(t * b * c * h * w, 0);
    return st;
}

std::size_t SpikeTensor::popcount() const {
    std::size_t n = 0;
    for (std::uint8_t v : data) n += v;
    return n;
}

Tensor SpikeTensor::to_tensor() const {
    Tensor t({t_steps, batch, channels, height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = static_cast<double>(data[i]);
    return t;
}

BinnedEvents bin_events(std::span<const Event> events, const WindowSpec& spec) {
    return bin_events(events, spec, events.empty() ? 0 : events.front().t_us);
}

BinnedEvents bin_events(std::span<const Event> events, const WindowSpec& spec, std::uint64_t t0_us) {
    spec.validate();
    BinnedEvents out;
    out.t_steps = spec.t_steps;
    out.n_bins = spec.n_bins;
    out.groups.assign(spec.t_steps * spec.n_bins * 2, {});

    const double bin_us = spec.bin_duration() * 1e6;
    const std::size_t total_bins = spec.t_steps * spec.n_bins;

    std::uint64_t prev_t = 0;
    bool first = true;
    for (const Event& e : events) {
        if (!first && e.t_us < prev_t) throw std::invalid_argument("bin_events: events must be sorted by timestamp");
        first = false;
        prev_t = e.t_us;
        if (e.p != -1 && e.p != 1) throw std::invalid_argument("bin_events: polarity must be -1 or +1");
        if (e.t_us < t0_us) {
            ++out.dropped;
            continue;
        }
        const std::size_t global_bin =
            static_cast<std::size_t>(std::floor(static_cast<double>(e.t_us - t0_us) / bin_us));
        if (global_bin >= total_bins) {
            ++out.dropped;
            continue;
        }
        const std::size_t win = global_bin / spec.n_bins;
        const std::size_t bin = global_bin % spec.n_bins;
        const std::size_t pol_idx = e.p > 0 ? 1 : 0;
        out.groups[out.group_index(win, bin, pol_idx)].push_back(e);
        ++out.assigned;
    }
    return out;
}

SpikeTensor encode_polarity(const BinnedEvents& groups, const WindowSpec& spec) {
    spec.validate();
    if (groups.t_steps != spec.t_steps || groups.n_bins != spec.n_bins)
        throw std::invalid_argument("encode_polarity: groups were binned with a different spec");
    SpikeTensor out = SpikeTensor::zeros(spec.t_steps, 1, spec.channels(), spec.sensor_h, spec.sensor_w);
    for (std::size_t win = 0; win < spec.t_steps; ++win)
        for (std::size_t bin = 0; bin < spec.n_bins; ++bin)
            for (std::size_t pol = 0; pol < 2; ++pol) {
                const std::size_t ch = 2 * bin + pol;
                for (const Event& e : groups.group(win, bin, pol)) {
                    if (e.x >= spec.sensor_w || e.y >= spec.sensor_h)
                        throw std::invalid_argument("encode_polarity: event coordinates out of sensor bounds");
                    out.data[out.index(win, 0, ch, e.y, e.x)] = 1;
                }
            }
    return out;
}

SpikeTensor batch_samples(std::span<const SpikeTensor> samples) {
    if (samples.empty()) throw std::invalid_argument("batch_samples: empty sample list");
    const SpikeTensor& first = samples.front();
    for (const SpikeTensor& s : samples) {
        if (s.batch != 1) throw std::invalid_argument("batch_samples: samples must have B = 1");
        if (!s.same_sample_shape(first)) throw std::invalid_argument("batch_samples: sample shapes differ");
    }
    SpikeTensor out =
        SpikeTensor::zeros(first.t_steps, samples.size(), first.channels, first.height, first.width);
    const std::size_t chunk = first.channels * first.height * first.width;
    for (std::size_t t = 0; t < first.t_steps; ++t)
        for (std::size_t b = 0; b < samples.size(); ++b)
            std::memcpy(out.data.data() + (t * samples.size() + b) * chunk, samples[b].data.data() + t * chunk,
                        chunk);
    return out;
}

void write_events_text(std::ostream& os, std::span<const Event> events) {
    for (const Event& e : events)
        os << e.t_us << ' ' << e.x << ' ' << e.y << ' ' << static_cast<int>(e.p) << '\n';
}

std::vector<Event> read_events_text(std::istream& is) {
    std::vector<Event> events;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        unsigned long long t;
        long x, y, p;
        if (!(ls >> t >> x >> y >> p))
            throw std::runtime_error("event text: malformed line " + std::to_string(line_no));
        std::string rest;
        if (ls >> rest) throw std::runtime_error("event text: trailing data on line " + std::to_string(line_no));
        if (p != -1 && p != 1)
            throw std::runtime_error("event text: bad polarity on line " + std::to_string(line_no));
        if (x < 0 || y < 0 || x > 0xFFFF || y > 0xFFFF)
            throw std::runtime_error("event text: coordinate out of range on line " + std::to_string(line_no));
        events.push_back(Event{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                               static_cast<std::int8_t>(p)});
    }
    return events;
}

namespace {

constexpr char kEventMagic[4] = {'E', 'V', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& v) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) acc |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    v = static_cast<T>(acc);
    return true;
}

}  // namespace

void write_events_binary(std::ostream& os, std::span<const Event> events) {
    os.write(kEventMagic, 4);
    for (const Event& e : events) {
        put_le<std::uint64_t>(os, e.t_us);
        put_le<std::uint16_t>(os, e.x);
        put_le<std::uint16_t>(os, e.y);
        put_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.p));
    }
}

std::vector<Event> read_events_binary(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kEventMagic, 4) != 0)
        throw std::runtime_error("event binary: missing EVT1 magic");
    std::vector<Event> events;
    std::size_t record = 0;
    while (true) {
        std::uint64_t t;
        if (!get_le(is, t)) {
            if (is.gcount() == 0) break;
            throw std::runtime_error("event binary: truncated record " + std::to_string(record));
        }
        std::uint16_t x, y;
        std::uint8_t praw;
        if (!get_le(is, x) || !get_le(is, y) || !get_le(is, praw))
            throw std::runtime_error("event binary: truncated record " + std::to_string(record));
        const std::int8_t p = static_cast<std::int8_t>(praw);
        if (p != -1 && p != 1)
            throw std::runtime_error("event binary: bad polarity in record " + std::to_string(record));
        events.push_back(Event{t, x, y, p});
        ++record;
    }
    return events;
}

}  // namespace neurove
