#include "pimforce/io/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pimforce/common.hpp"

namespace pimforce::io {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'I', 'M', 'F'};
constexpr std::size_t kMaxRank = 8;

template <typename U>
void put_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> b;
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b.data(), b.size());
}

template <typename U>
U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) throw InvalidInput("tensor file: truncated header");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

void write_header(std::ostream& os, std::span<const std::uint32_t> dims, DType dtype) {
    if (dims.size() > kMaxRank) throw ShapeError("tensor file: rank above 8");
    os.write(kMagic.data(), kMagic.size());
    put_u16(os, kTensorVersion);
    put_u8(os, static_cast<std::uint8_t>(dtype));
    put_u8(os, static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) put_u32(os, d);
}

std::size_t product(std::span<const std::uint32_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

template <typename T>
void write_values(std::ostream& os, std::span<const T> values) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    std::vector<char> buf(values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const U bits = std::bit_cast<U>(values[i]);
        for (std::size_t k = 0; k < sizeof(T); ++k) buf[i * sizeof(T) + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put_le(os, v); }
void put_u16(std::ostream& os, std::uint16_t v) { put_le(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
std::uint8_t get_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint16_t get_u16(std::istream& is) { return get_le<std::uint16_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }

std::size_t TensorData::numel() const { return product(dims); }

void write_tensor(std::ostream& os, std::span<const std::uint32_t> dims, std::span<const double> values,
                  DType dtype) {
    if (product(dims) != values.size()) throw ShapeError("tensor file: payload does not match dims");
    write_header(os, dims, dtype);
    if (dtype == DType::F64) {
        write_values(os, values);
    } else {
        std::vector<float> f(values.begin(), values.end());
        write_values<float>(os, f);
    }
    if (!os) throw Error("tensor file: write failed");
}

void write_tensor(std::ostream& os, std::span<const std::uint32_t> dims, std::span<const float> values) {
    if (product(dims) != values.size()) throw ShapeError("tensor file: payload does not match dims");
    write_header(os, dims, DType::F32);
    write_values(os, values);
    if (!os) throw Error("tensor file: write failed");
}

TensorData read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw InvalidInput("tensor file: bad magic");
    const auto version = get_u16(is);
    if (version != kTensorVersion) throw InvalidInput("tensor file: unsupported version " + std::to_string(version));
    TensorData t;
    const auto code = get_u8(is);
    if (code != 1 && code != 2) throw InvalidInput("tensor file: unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<DType>(code);
    const auto rank = get_u8(is);
    if (rank > kMaxRank) throw InvalidInput("tensor file: rank above 8");
    for (std::size_t i = 0; i < rank; ++i) t.dims.push_back(get_u32(is));
    const std::size_t n = product(t.dims);
    const std::size_t bytes = n * dtype_size(t.dtype);
    std::vector<unsigned char> buf(bytes);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes)))
        throw InvalidInput("tensor file: truncated payload");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (t.dtype == DType::F32) {
            std::uint32_t bits = 0;
            for (std::size_t k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
            t.values[i] = std::bit_cast<float>(bits);
        } else {
            std::uint64_t bits = 0;
            for (std::size_t k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
            t.values[i] = std::bit_cast<double>(bits);
        }
    }
    return t;
}

void save_tensor(const std::string& path, std::span<const std::uint32_t> dims, std::span<const double> values,
                 DType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    write_tensor(os, dims, values, dtype);
}

void save_tensor(const std::string& path, std::span<const std::uint32_t> dims, std::span<const float> values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    write_tensor(os, dims, values);
}

TensorData load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open " + path);
    try {
        return read_tensor(is);
    } catch (const InvalidInput& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

struct TensorWriter::Impl {
    std::ofstream os;
    std::vector<std::uint32_t> dims;
    DType dtype;
    std::size_t row_size = 1;
    std::size_t rows = 0;
    bool closed = false;
};

TensorWriter::TensorWriter(const std::string& path, std::vector<std::uint32_t> dims, DType dtype)
    : impl_(std::make_unique<Impl>()) {
    if (dims.empty()) throw ShapeError("tensor writer: rank must be >= 1");
    impl_->os.open(path, std::ios::binary);
    if (!impl_->os) throw Error("cannot write " + path);
    impl_->dims = std::move(dims);
    impl_->dtype = dtype;
    for (std::size_t i = 1; i < impl_->dims.size(); ++i) impl_->row_size *= impl_->dims[i];
    write_header(impl_->os, impl_->dims, dtype);
}

TensorWriter::~TensorWriter() = default;

void TensorWriter::append(std::span<const float> row) {
    if (row.size() != impl_->row_size) throw ShapeError("tensor writer: row size mismatch");
    if (impl_->dtype == DType::F32) {
        write_values(impl_->os, row);
    } else {
        std::vector<double> d(row.begin(), row.end());
        write_values<double>(impl_->os, d);
    }
    ++impl_->rows;
}

void TensorWriter::append(std::span<const double> row) {
    if (row.size() != impl_->row_size) throw ShapeError("tensor writer: row size mismatch");
    if (impl_->dtype == DType::F64) {
        write_values(impl_->os, row);
    } else {
        std::vector<float> f(row.begin(), row.end());
        write_values<float>(impl_->os, f);
    }
    ++impl_->rows;
}

void TensorWriter::close() {
    if (impl_->closed) return;
    impl_->closed = true;
    if (impl_->rows != impl_->dims[0])
        throw ShapeError("tensor writer: wrote " + std::to_string(impl_->rows) + " rows, header says " +
                         std::to_string(impl_->dims[0]));
    impl_->os.close();
    if (!impl_->os) throw Error("tensor writer: write failed");
}

}  // namespace pimforce::io
