#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lorablend/errors.hpp"
#include "lorablend/tensor.hpp"

namespace lorablend {

// Little-endian byte sink. All multi-byte values are written LSB first,
// independent of host endianness.
class ByteWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v);
    void f32(float v);
    void f64(double v);
    void str(const std::string& s);  // u32 length + raw bytes
    void bytes(const void* p, std::size_t n);

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    void save(const std::string& path) const;  // IoError on failure

private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian byte source with offset tracking; every read past the end
// raises FormatError carrying the offending offset.
class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
    static ByteReader from_file(const std::string& path);  // IoError

    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64();
    float f32();
    double f64();
    std::string str();
    void raw(void* dst, std::size_t n, const char* what);

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n, const char* what);
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// Raw float32 grid dump: header H u32, W u32, then H*W f32 row-major.
void write_grid_f32(const std::string& path, const BinaryPrior& b);
Grid2D read_grid_f32(const std::string& path);

// Raw float32 matrix dump: header rows u32, cols u32, then f32 row-major.
void write_matrix_f32(const std::string& path, const FeatureMatrix& m);
FeatureMatrix read_matrix_f32(const std::string& path);

// Binary PGM (P5, maxval 255); mask values map {0,1} -> {0,255}.
void write_pgm(const std::string& path, const BinaryPrior& b);

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n);
std::uint64_t fnv1a_file(const std::string& path);  // IoError when unreadable
std::string checksum_hex(std::uint64_t h);

}  // namespace lorablend
