#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pimforce::io {

// "PIMF" tensor file: magic, u16 version (1), u8 dtype, u8 rank, rank x u32
// dims, then the row-major payload. Everything little-endian.
enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

inline constexpr std::uint16_t kTensorVersion = 1;

struct TensorData {
    DType dtype = DType::F64;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;  // widened from f32 when stored as f32

    std::size_t numel() const;
};

void write_tensor(std::ostream& os, std::span<const std::uint32_t> dims, std::span<const double> values,
                  DType dtype = DType::F64);
void write_tensor(std::ostream& os, std::span<const std::uint32_t> dims, std::span<const float> values);
TensorData read_tensor(std::istream& is);

void save_tensor(const std::string& path, std::span<const std::uint32_t> dims, std::span<const double> values,
                 DType dtype = DType::F64);
void save_tensor(const std::string& path, std::span<const std::uint32_t> dims, std::span<const float> values);
TensorData load_tensor(const std::string& path);

// Incremental writer for tensors too large to hold in memory; rows are
// appended in order and the row count must match dims[0] on close().
class TensorWriter {
public:
    TensorWriter(const std::string& path, std::vector<std::uint32_t> dims, DType dtype);
    ~TensorWriter();
    TensorWriter(const TensorWriter&) = delete;
    TensorWriter& operator=(const TensorWriter&) = delete;

    void append(std::span<const float> row);
    void append(std::span<const double> row);
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Little-endian primitives shared with the checkpoint archive.
void put_u8(std::ostream& os, std::uint8_t v);
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
std::uint8_t get_u8(std::istream& is);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);

}  // namespace pimforce::io
