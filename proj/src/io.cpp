#include "lorablend/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace lorablend {

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void ByteWriter::i64(std::int64_t v) {
    u64(static_cast<std::uint64_t>(v));
}

void ByteWriter::f32(float v) {
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::f64(double v) {
    u64(std::bit_cast<std::uint64_t>(v));
}

void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void ByteWriter::bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

ByteReader ByteReader::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
}

void ByteReader::need(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
        throw FormatError(std::string("truncated while reading ") + what, pos_);
    }
}

std::uint32_t ByteReader::u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    }
    pos_ += 8;
    return v;
}

std::int64_t ByteReader::i64() {
    return static_cast<std::int64_t>(u64());
}

float ByteReader::f32() {
    return std::bit_cast<float>(u32());
}

double ByteReader::f64() {
    return std::bit_cast<double>(u64());
}

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    need(n, "string body");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::copy(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
              buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n), static_cast<std::uint8_t*>(dst));
    pos_ += n;
}

namespace {

void write_f32_dump(const std::string& path, int h, int w, const double* data) {
    ByteWriter bw;
    bw.u32(static_cast<std::uint32_t>(h));
    bw.u32(static_cast<std::uint32_t>(w));
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        bw.f32(static_cast<float>(data[i]));
    }
    bw.save(path);
}

}  // namespace

void write_grid_f32(const std::string& path, const BinaryPrior& b) {
    std::vector<double> tmp(b.data.begin(), b.data.end());
    write_f32_dump(path, b.height, b.width, tmp.data());
}

Grid2D read_grid_f32(const std::string& path) {
    ByteReader br = ByteReader::from_file(path);
    const std::uint32_t h = br.u32();
    const std::uint32_t w = br.u32();
    Grid2D g(static_cast<int>(h), static_cast<int>(w));
    for (auto& v : g.data) {
        v = static_cast<double>(br.f32());
    }
    if (!br.at_end()) {
        throw FormatError("trailing bytes after grid data", br.offset());
    }
    return g;
}

void write_matrix_f32(const std::string& path, const FeatureMatrix& m) {
    write_f32_dump(path, m.rows, m.cols, m.data.data());
}

FeatureMatrix read_matrix_f32(const std::string& path) {
    ByteReader br = ByteReader::from_file(path);
    const std::uint32_t r = br.u32();
    const std::uint32_t c = br.u32();
    FeatureMatrix m(static_cast<int>(r), static_cast<int>(c));
    for (auto& v : m.data) {
        v = static_cast<double>(br.f32());
    }
    if (!br.at_end()) {
        throw FormatError("trailing bytes after matrix data", br.offset());
    }
    return m;
}

namespace {

void write_pgm_bytes(const std::string& path, int h, int w, const std::vector<std::uint8_t>& px) {
    ByteWriter bw;
    char header[64];
    const int n = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", w, h);
    bw.bytes(header, static_cast<std::size_t>(n));
    bw.bytes(px.data(), px.size());
    bw.save(path);
}

}  // namespace

void write_pgm(const std::string& path, const BinaryPrior& b) {
    std::vector<std::uint8_t> px(b.data.size());
    for (std::size_t i = 0; i < b.data.size(); ++i) {
        px[i] = b.data[i] ? 255 : 0;
    }
    write_pgm_bytes(path, b.height, b.width, px);
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(data.data(), data.size());
}

std::string checksum_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace lorablend
