#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "neurove/tensor.hpp"

namespace neurove {

/// One event-camera event. Timestamps are microseconds, monotone within a
/// stream; polarity is exactly -1 or +1.
struct Event {
    std::uint64_t t_us = 0;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Layout of the encoding: one SNN time step per window of
/// `window_duration` seconds, each window split into `n_bins` chronological
/// bins, `t_steps` windows per sample.
struct WindowSpec {
    double window_duration = 0.05;
    std::size_t n_bins = 5;
    std::size_t t_steps = 5;
    std::size_t sensor_h = 64;
    std::size_t sensor_w = 64;

    void validate() const;
    double bin_duration() const { return window_duration / static_cast<double>(n_bins); }
    std::size_t channels() const { return 2 * n_bins; }
};

/// Binary 5-axis tensor [T, B, C, H, W] with C = 2 * n_bins; channel
/// index = 2*bin + polarity (negative polarity -> 0, positive -> 1).
struct SpikeTensor {
    std::size_t t_steps = 0, batch = 0, channels = 0, height = 0, width = 0;
    std::vector<std::uint8_t> data;

    static SpikeTensor zeros(std::size_t t, std::size_t b, std::size_t c, std::size_t h, std::size_t w);
    std::size_t size() const { return data.size(); }
    std::size_t index(std::size_t t, std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return (((t * batch + b) * channels + c) * height + y) * width + x;
    }
    std::uint8_t at(std::size_t t, std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data[index(t, b, c, y, x)];
    }
    std::size_t popcount() const;
    bool same_sample_shape(const SpikeTensor& o) const {
        return t_steps == o.t_steps && channels == o.channels && height == o.height && width == o.width;
    }
    /// Dense double copy [T,B,C,H,W] for the network input.
    Tensor to_tensor() const;
};

/// Events grouped by (window, bin, polarity); events outside the covered
/// span are dropped and counted.
struct BinnedEvents {
    std::size_t t_steps = 0;
    std::size_t n_bins = 0;
    std::vector<std::vector<Event>> groups;  // (win * n_bins + bin) * 2 + pol_idx
    std::size_t assigned = 0;
    std::size_t dropped = 0;

    std::size_t group_index(std::size_t win, std::size_t bin, std::size_t pol_idx) const {
        return (win * n_bins + bin) * 2 + pol_idx;
    }
    const std::vector<Event>& group(std::size_t win, std::size_t bin, std::size_t pol_idx) const {
        return groups[group_index(win, bin, pol_idx)];
    }
};

/// Partition a sorted event stream into (window, bin, polarity) groups.
/// The two-argument form takes t0 = first event's timestamp.
BinnedEvents bin_events(std::span<const Event> events, const WindowSpec& spec);
BinnedEvents bin_events(std::span<const Event> events, const WindowSpec& spec, std::uint64_t t0_us);

/// Binary-occupancy encoding of one sample (B = 1).
SpikeTensor encode_polarity(const BinnedEvents& groups, const WindowSpec& spec);

/// Stack single-sample tensors along the batch axis.
SpikeTensor batch_samples(std::span<const SpikeTensor> samples);

// --- event file formats -------------------------------------------------
// Text: one `t_us x y p` line per event, p in {-1, 1}.
// Binary: magic "EVT1", then packed little-endian records
// (u64 t_us, u16 x, u16 y, i8 p).

void write_events_text(std::ostream& os, std::span<const Event> events);
std::vector<Event> read_events_text(std::istream& is);
void write_events_binary(std::ostream& os, std::span<const Event> events);
std::vector<Event> read_events_binary(std::istream& is);

}  // namespace neurove
