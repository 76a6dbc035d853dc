#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pimforce/io/csv.hpp"
#include "pimforce/io/tensor_file.hpp"
#include "pimforce/rng.hpp"

using namespace pimforce;
using namespace pimforce::io;
namespace fs = std::filesystem;

namespace {

std::string temp(const std::string& name) { return (fs::temp_directory_path() / ("pimforce_io_" + name)).string(); }

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

}  // namespace

TEST_CASE("tensor files round trip bitwise") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::uint32_t> dims;
        const std::size_t rank = 1 + rng.below(4);
        std::size_t n = 1;
        for (std::size_t r = 0; r < rank; ++r) {
            dims.push_back(static_cast<std::uint32_t>(1 + rng.below(6)));
            n *= dims.back();
        }
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
        std::stringstream ss;
        write_tensor(ss, dims, v);
        const auto back = read_tensor(ss);
        CHECK(back.dims == dims);
        CHECK(back.dtype == DType::F64);
        CHECK(std::memcmp(back.values.data(), v.data(), n * sizeof(double)) == 0);

        std::vector<float> f(n);
        for (auto& x : f) x = static_cast<float>(rng.normal());
        std::stringstream sf;
        write_tensor(sf, dims, f);
        const auto bf = read_tensor(sf);
        CHECK(bf.dtype == DType::F32);
        for (std::size_t i = 0; i < n; ++i) CHECK(static_cast<float>(bf.values[i]) == f[i]);
    }
}

TEST_CASE("tensor header layout") {
    std::stringstream ss;
    const std::vector<std::uint32_t> dims = {2, 3};
    const std::vector<double> v = {1, 2, 3, 4, 5, 6};
    write_tensor(ss, dims, v);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "PIMF");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);
    CHECK(static_cast<unsigned char>(bytes[7]) == 2);
    CHECK(bytes.size() == 4 + 2 + 1 + 1 + 2 * 4 + 6 * 8);
}

TEST_CASE("corrupt tensor files are rejected") {
    std::stringstream bad("NOPE....");
    CHECK_THROWS_AS(read_tensor(bad), InvalidInput);
    std::stringstream ss;
    const std::vector<std::uint32_t> dims = {4};
    const std::vector<double> v = {1, 2, 3, 4};
    write_tensor(ss, dims, v);
    std::stringstream cut(ss.str().substr(0, ss.str().size() - 5));
    CHECK_THROWS_AS(read_tensor(cut), InvalidInput);
}

TEST_CASE("streaming writer checks the row count") {
    const auto path = temp("writer.pimf");
    {
        TensorWriter w(path, {3, 2}, DType::F32);
        for (int i = 0; i < 3; ++i) w.append(std::vector<float>{static_cast<float>(i), 0.5f});
        w.close();
    }
    const auto t = load_tensor(path);
    CHECK(t.dims == std::vector<std::uint32_t>{3, 2});
    CHECK(t.values[4] == 2.0);
    TensorWriter short_w(path, {3, 2}, DType::F64);
    short_w.append(std::vector<double>{1, 2});
    CHECK_THROWS(short_w.close());
    TensorWriter wide(path, {1, 2}, DType::F64);
    CHECK_THROWS(wide.append(std::vector<double>{1, 2, 3}));
    fs::remove(path);
}

TEST_CASE("timed csv round trip and errors with line numbers") {
    sync::TimedStream s;
    s.arity = 2;
    s.push(0.0, std::vector<double>{1.5, -2.25});
    s.push(0.1, std::vector<double>{1e-300, 3.0 / 7.0});
    const auto path = temp("stream.csv");
    write_timed_csv(path, s, numbered("c", 2));
    const auto back = read_timed_csv(path, 2);
    CHECK(back.timestamps == s.timestamps);
    CHECK(back.values == s.values);
    CHECK(read_timed_csv(path).arity == 2);
    CHECK_THROWS_AS(read_timed_csv(path, 3), ParseError);

    write_file(path, "timestamp,a\n0,1\n0.1,oops\n");
    try {
        read_timed_csv(path, 1);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    write_file(path, "timestamp,a\n0,1\n0,2\n");
    CHECK_THROWS_AS(read_timed_csv(path, 1), ParseError);
    write_file(path, "time,a\n0,1\n");
    CHECK_THROWS_AS(read_timed_csv(path, 1), ParseError);
    write_file(path, "timestamp,a\n0,1,2\n");
    CHECK_THROWS_AS(read_timed_csv(path, 1), ParseError);
    write_file(path, "timestamp,a\n0,nan\n");
    CHECK_THROWS_AS(read_timed_csv(path, 1), ParseError);
    CHECK_THROWS_AS(read_timed_csv(temp("missing.csv"), 1), InvalidInput);
    fs::remove(path);
}

TEST_CASE("raw pressure csv round trip") {
    std::vector<pressure::RawPressureFrame> frames(3);
    for (std::size_t i = 0; i < 3; ++i) {
        frames[i].timestamp = 0.025 * static_cast<double>(i);
        frames[i].glove[17] = 1.0 + static_cast<double>(i);
        frames[i].fsr[4] = 0.1;
    }
    const auto path = temp("pressure.csv");
    write_raw_pressure_csv(path, frames);
    const auto back = read_raw_pressure_csv(path);
    REQUIRE(back.size() == 3);
    CHECK(back[2].glove[17] == 3.0);
    CHECK(back[1].fsr[4] == 0.1);
    CHECK(back[1].timestamp == 0.025);
    fs::remove(path);
}

TEST_CASE("shortest double formatting round trips") {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        CHECK(std::stod(format_double(v)) == v);
    }
}
