#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oracles.hpp"
#include "pimforce/rng.hpp"
#include "pimforce/semgproc.hpp"

using namespace pimforce;
using namespace pimforce::semgproc;

namespace {

SemgWindow random_window(Rng& rng) {
    SemgWindow w;
    w.data.resize(kEmgChannels * kEmgWindow);
    for (auto& v : w.data) v = rng.normal();
    return w;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / den;
}

EmgStream ramp_stream(std::size_t n) {
    EmgStream s;
    for (std::size_t i = 0; i < n; ++i) {
        s.timestamps.push_back(static_cast<double>(i) / kEmgRate);
        for (std::size_t c = 0; c < kEmgChannels; ++c) s.samples.push_back(static_cast<double>(i * 10 + c));
    }
    return s;
}

}  // namespace

TEST_CASE("spectrogram shape") {
    Rng rng(1);
    const auto s = stft(random_window(rng));
    CHECK(s.values.size() == 8u * 32u * 64u);
    CHECK(kStftFrames == 32);
}

TEST_CASE("spectrogram matches a direct DFT") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto w = random_window(rng);
        CHECK(rel_error(stft(w).values, oracle::dft_spectrogram(w.data)) <= 1e-9);
    }
}

TEST_CASE("pure tone peaks at its bin") {
    SemgWindow w;
    w.data.resize(kEmgChannels * kEmgWindow);
    const double hz = 10 * kEmgRate / kStftWindow;  // bin 10
    for (std::size_t c = 0; c < kEmgChannels; ++c)
        for (std::size_t n = 0; n < kEmgWindow; ++n)
            w.data[c * kEmgWindow + n] = std::sin(2 * std::numbers::pi * hz * static_cast<double>(n) / kEmgRate);
    const auto s = stft(w);
    for (std::size_t f = 0; f < kStftFrames; f += 7) {
        std::size_t best = 0;
        for (std::size_t b = 1; b < kStftBins; ++b)
            if (s.at(3, f, b) > s.at(3, f, best)) best = b;
        CHECK(best == 10);
    }
}

TEST_CASE("scales and cutoff") {
    Rng rng(3);
    const auto w = random_window(rng);
    const auto mag = stft(w);
    StftConfig p;
    p.scale = SpectrumScale::Power;
    const auto pow = stft(w, p);
    StftConfig l;
    l.scale = SpectrumScale::Log;
    const auto lg = stft(w, l);
    StftConfig c;
    c.bins = BinSelection::BelowCutoff;
    c.cutoff_hz = 100.0;
    const auto cut = stft(w, c);
    for (std::size_t i = 0; i < mag.values.size(); i += 13) {
        CHECK(pow.values[i] == doctest::Approx(mag.values[i] * mag.values[i]).epsilon(1e-12));
        CHECK(lg.values[i] == doctest::Approx(std::log(mag.values[i] + 1e-6)).epsilon(1e-12));
    }
    const double bin_hz = kEmgRate / kStftWindow;
    for (std::size_t b = 0; b < kStftBins; ++b) {
        if (b * bin_hz >= 100.0)
            CHECK(cut.at(0, 0, b) == 0.0);
        else
            CHECK(cut.at(0, 0, b) == mag.at(0, 0, b));
    }
}

TEST_CASE("mean removal cancels a DC offset") {
    Rng rng(4);
    auto w = random_window(rng);
    auto shifted = w;
    for (auto& v : shifted.data) v += 5.0;
    StftConfig c;
    c.remove_mean = true;
    const auto a = stft(w, c), b = stft(shifted, c);
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-9);
}

TEST_CASE("framing counts and window contents") {
    const auto s = ramp_stream(1248 + 156 * 4 + 100);
    CHECK(window_count(s.size(), 156) == 5);
    CHECK(window_count(1247, 156) == 0);
    const auto ws = frame_stream(s, 156);
    REQUIRE(ws.size() == 5);
    CHECK(ws[2].data[3 * kEmgWindow + 7] == static_cast<double>((2 * 156 + 7) * 10 + 3));
    CHECK(ws[2].end_time == s.timestamps[2 * 156 + 1247]);
    CHECK_THROWS_AS(frame_stream(ramp_stream(1000), 156), InvalidInput);
    CHECK_THROWS_AS(window_count(5000, 0), InvalidInput);
}

TEST_CASE("wrong window size is a shape error") {
    SemgWindow w;
    w.data.resize(100);
    CHECK_THROWS_AS(stft(w), ShapeError);
}
