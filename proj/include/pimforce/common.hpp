#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace pimforce {

// Error hierarchy. Every failure the library reports on bad data derives from
// Error so the CLI can map it to the data-error exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class DegeneratePose : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

using Vec3 = std::array<double, 3>;

inline constexpr std::size_t kNumJoints = 21;
inline constexpr std::size_t kNumArticulated = 15;
inline constexpr std::size_t kNumGloveAngles = 20;
inline constexpr std::size_t kNumFingers = 5;

inline constexpr std::size_t kEmgChannels = 8;
inline constexpr std::size_t kEmgWindow = 1248;
inline constexpr double kEmgRate = 2000.0;
inline constexpr double kPoseRate = 120.0;
inline constexpr double kPressureRate = 40.0;

inline constexpr std::size_t kStftWindow = 256;
inline constexpr std::size_t kStftHop = 32;
inline constexpr std::size_t kStftFrames = (kEmgWindow - kStftWindow) / kStftHop + 1;  // 32
inline constexpr std::size_t kStftBins = 64;

inline constexpr std::size_t kGrid = 48;
inline constexpr double kGridLow = 12.0;
inline constexpr double kGridHigh = 36.0;

inline constexpr std::size_t kNumRegions = 9;
inline constexpr std::size_t kGloveNodes = 65;
inline constexpr std::size_t kFingertipFsrs = 5;
inline constexpr double kPressureMax = 20.0;
inline constexpr double kPressureFloor = 0.2;

}  // namespace pimforce
