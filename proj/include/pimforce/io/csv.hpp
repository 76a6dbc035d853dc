#pragma once

#include <string>
#include <vector>

#include "pimforce/pressure.hpp"
#include "pimforce/sync.hpp"

namespace pimforce::io {

// Timestamped CSV: a header row starting with "timestamp", then one row per
// tick. `arity` 0 accepts whatever width the header declares. Malformed
// rows throw ParseError carrying the 1-based line number.
sync::TimedStream read_timed_csv(const std::string& path, std::size_t arity = 0);
void write_timed_csv(const std::string& path, const sync::TimedStream& s,
                     const std::vector<std::string>& columns);

// Raw glove pressure: timestamp, g0..g64, f0..f4.
std::vector<pressure::RawPressureFrame> read_raw_pressure_csv(const std::string& path);
void write_raw_pressure_csv(const std::string& path, const std::vector<pressure::RawPressureFrame>& frames);

// Column names: prefix0..prefix{n-1}.
std::vector<std::string> numbered(const std::string& prefix, std::size_t n);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace pimforce::io
