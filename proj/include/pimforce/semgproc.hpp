#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pimforce/common.hpp"

namespace pimforce::semgproc {

// Raw multichannel stream, samples stored time-major: samples[t * 8 + ch].
struct EmgStream {
    std::vector<double> timestamps;
    std::vector<double> samples;

    std::size_t size() const { return timestamps.size(); }
};

// 8 x 1248 samples, channel-major: data[ch * 1248 + n].
struct SemgWindow {
    double start_time = 0.0;
    double end_time = 0.0;  // timestamp of the last sample
    std::vector<double> data;
};

// 8 x 32 x 64 magnitudes, layout [ch][frame][bin].
struct Spectrogram {
    static constexpr std::size_t kSize = kEmgChannels * kStftFrames * kStftBins;
    std::vector<double> values;

    double at(std::size_t ch, std::size_t frame, std::size_t bin) const {
        return values[(ch * kStftFrames + frame) * kStftBins + bin];
    }
};

enum class SpectrumScale { Magnitude, Power, Log };

// FirstBins keeps DC..bin 63. BelowCutoff additionally zeroes bins at or above
// `cutoff_hz`, keeping the 64-bin shape.
enum class BinSelection { FirstBins, BelowCutoff };

struct StftConfig {
    SpectrumScale scale = SpectrumScale::Magnitude;
    BinSelection bins = BinSelection::FirstBins;
    double cutoff_hz = 64.0;
    bool remove_mean = false;
    double log_epsilon = 1e-6;
};

inline constexpr std::size_t kDefaultStride = 156;

std::size_t window_count(std::size_t num_samples, std::size_t stride);

// Sliding 1248-sample windows; a trailing partial window is dropped.
std::vector<SemgWindow> frame_stream(const EmgStream& stream, std::size_t stride);

// Builds the window starting at sample `start`.
SemgWindow window_at(const EmgStream& stream, std::size_t start);

// Periodic Hamming window of length 256.
const std::vector<double>& hamming_window();

Spectrogram stft(const SemgWindow& w, const StftConfig& cfg = {});

// In-place radix-2 complex FFT; `re` and `im` must have power-of-two length.
void fft_inplace(std::span<double> re, std::span<double> im);

}  // namespace pimforce::semgproc
