#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dash/tensor.hpp"

namespace dash {

// Whole-file atomic write: stage to <path>.tmp, then rename over the target.
// Reruns replace outputs instead of appending.
inline void atomic_write_file(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp);
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Minimal binary tensor container: magic, version, dtype, dims, then the
// row-major little-endian f64 payload.
//   "DSHT" | u32 version | u8 dtype (0 = f64) | u8 ndim | u64 dims... | data
inline std::string encode_tensor(const Tensor& t) {
    std::string out;
    out.append("DSHT", 4);
    auto put_u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); };
    put_u32(1);
    out.push_back(static_cast<char>(0));  // f64
    out.push_back(static_cast<char>(t.shape.size()));
    for (int e : t.shape) put_u64(static_cast<std::uint64_t>(e));
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    return out;
}

inline Tensor decode_tensor(const std::string& buf) {
    if (buf.size() < 10 || buf.compare(0, 4, "DSHT") != 0)
        throw std::runtime_error("not a tensor container");
    std::size_t off = 4;
    auto get_u32 = [&]() {
        std::uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    };
    auto get_u64 = [&]() {
        std::uint64_t v;
        std::memcpy(&v, buf.data() + off, 8);
        off += 8;
        return v;
    };
    std::uint32_t version = get_u32();
    if (version != 1) throw std::runtime_error("unsupported container version");
    std::uint8_t dtype = static_cast<std::uint8_t>(buf[off++]);
    if (dtype != 0) throw std::runtime_error("unsupported dtype");
    std::uint8_t ndim = static_cast<std::uint8_t>(buf[off++]);
    Shape shape;
    for (int i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(get_u64()));
    Tensor t(shape);
    if (buf.size() - off != t.data.size() * sizeof(double))
        throw std::runtime_error("tensor payload size mismatch");
    std::memcpy(t.data.data(), buf.data() + off, buf.size() - off);
    return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
    atomic_write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

// Fixed-column CSV with a header row; writes are whole-file atomic.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) body_ += ",";
            body_ += columns_[i];
        }
        body_ += "\n";
    }

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw std::invalid_argument("csv row arity mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) body_ += ",";
            body_ += cells[i];
        }
        body_ += "\n";
    }

    const std::string& str() const { return body_; }
    void write(const std::string& path) const { atomic_write_file(path, body_); }

private:
    std::vector<std::string> columns_;
    std::string body_;
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace dash
