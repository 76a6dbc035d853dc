#include "pimforce/io/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

#include "pimforce/common.hpp"

namespace pimforce::io {

namespace {

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double parse_number(std::string_view field, std::size_t line) {
    field = trim(field);
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw ParseError("malformed number '" + std::string(field) + "'", line);
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(field) + "'", line);
    return v;
}

// Reads rows of exactly `width` numbers after a header whose first column is
// "timestamp". Calls fn(line, values) per row.
template <typename Fn>
void read_rows(const std::string& path, std::size_t width, Fn fn) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = trim(line);
        if (view.empty()) continue;
        auto fields = split(view);
        if (!header) {
            if (trim(fields[0]) != "timestamp") throw ParseError(path + ": header must start with 'timestamp'", lineno);
            if (width && fields.size() != width)
                throw ParseError(path + ": header has " + std::to_string(fields.size()) + " columns, expected " +
                                     std::to_string(width),
                                 lineno);
            width = fields.size();
            header = true;
            continue;
        }
        if (fields.size() != width)
            throw ParseError(path + ": row has " + std::to_string(fields.size()) + " columns, expected " +
                                 std::to_string(width),
                             lineno);
        row.resize(width);
        for (std::size_t i = 0; i < width; ++i) row[i] = parse_number(fields[i], lineno);
        fn(lineno, row);
    }
    if (!header) throw ParseError(path + ": missing header", lineno + 1);
}

void write_header(std::ofstream& os, const std::vector<std::string>& columns) {
    os << "timestamp";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

sync::TimedStream read_timed_csv(const std::string& path, std::size_t arity) {
    sync::TimedStream s;
    bool first = true;
    read_rows(path, arity ? arity + 1 : 0, [&](std::size_t line, const std::vector<double>& row) {
        if (first) {
            s.arity = row.size() - 1;
            first = false;
        }
        if (!s.timestamps.empty() && !(row[0] > s.timestamps.back()))
            throw ParseError(path + ": timestamps must increase strictly", line);
        s.push(row[0], std::span<const double>(row).subspan(1));
    });
    if (first) s.arity = arity;
    return s;
}

void write_timed_csv(const std::string& path, const sync::TimedStream& s, const std::vector<std::string>& columns) {
    if (columns.size() != s.arity) throw ShapeError("write_timed_csv: column count does not match the stream");
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    write_header(os, columns);
    std::string line;
    for (std::size_t i = 0; i < s.size(); ++i) {
        line = format_double(s.timestamps[i]);
        for (double v : s.row(i)) {
            line += ',';
            line += format_double(v);
        }
        line += '\n';
        os << line;
    }
    if (!os) throw Error("write failed: " + path);
}

std::vector<pressure::RawPressureFrame> read_raw_pressure_csv(const std::string& path) {
    std::vector<pressure::RawPressureFrame> frames;
    read_rows(path, 1 + kGloveNodes + kFingertipFsrs, [&](std::size_t line, const std::vector<double>& row) {
        if (!frames.empty() && !(row[0] > frames.back().timestamp))
            throw ParseError(path + ": timestamps must increase strictly", line);
        pressure::RawPressureFrame f;
        f.timestamp = row[0];
        std::copy_n(row.begin() + 1, kGloveNodes, f.glove.begin());
        std::copy_n(row.begin() + 1 + kGloveNodes, kFingertipFsrs, f.fsr.begin());
        frames.push_back(f);
    });
    return frames;
}

void write_raw_pressure_csv(const std::string& path, const std::vector<pressure::RawPressureFrame>& frames) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    auto cols = numbered("g", kGloveNodes);
    for (auto& c : numbered("f", kFingertipFsrs)) cols.push_back(c);
    write_header(os, cols);
    std::string line;
    for (const auto& f : frames) {
        line = format_double(f.timestamp);
        for (double v : f.glove) {
            line += ',';
            line += format_double(v);
        }
        for (double v : f.fsr) {
            line += ',';
            line += format_double(v);
        }
        line += '\n';
        os << line;
    }
    if (!os) throw Error("write failed: " + path);
}

}  // namespace pimforce::io
