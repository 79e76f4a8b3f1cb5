#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "lspt/errors.hpp"

namespace lspt {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

// Binary tensor container.
//
// Layout (all integers little-endian):
//   magic   "LSPT" (4 bytes)
//   version u32 (currently 1)
//   count   u32
//   entries count times:
//     name_len u32, name bytes (UTF-8)
//     dtype    u32 (0 = float32, 1 = float64)
//     rank     u32
//     dims     rank x u64
//     data     prod(dims) * sizeof(dtype) raw bytes
//
// Declared sizes must match the payload exactly; readers reject unknown
// versions and dtypes and any trailing bytes.
struct TensorEntry {
    std::vector<uint64_t> dims;
    std::vector<float> f32;    // filled when dtype 0
    std::vector<double> f64;   // filled when dtype 1

    bool is_f32() const { return f64.empty() && !f32.empty(); }
    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

class TensorContainer {
public:
    static constexpr uint32_t kVersion = 1;

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const TensorEntry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("container: missing entry '" + name + "'");
        return it->second;
    }

    const std::map<std::string, TensorEntry>& entries() const { return entries_; }

    void put_f32(const std::string& name, std::vector<uint64_t> dims, std::vector<float> data) {
        check_shape(name, dims, data.size());
        TensorEntry e;
        e.dims = std::move(dims);
        e.f32 = std::move(data);
        entries_[name] = std::move(e);
        order_.push_back(name);
    }

    void put_f64(const std::string& name, std::vector<uint64_t> dims, std::vector<double> data) {
        check_shape(name, dims, data.size());
        TensorEntry e;
        e.dims = std::move(dims);
        e.f64 = std::move(data);
        entries_[name] = std::move(e);
        order_.push_back(name);
    }

    void put_scalar(const std::string& name, double v) { put_f64(name, {1}, {v}); }

    double scalar(const std::string& name) const {
        const TensorEntry& e = at(name);
        if (e.element_count() != 1) throw ConfigError("container: '" + name + "' is not a scalar");
        return e.is_f32() ? static_cast<double>(e.f32[0]) : e.f64[0];
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("container: cannot open '" + path + "' for writing");
        out.write("LSPT", 4);
        write_u32(out, kVersion);
        write_u32(out, static_cast<uint32_t>(order_.size()));
        for (const std::string& name : order_) {
            const TensorEntry& e = entries_.at(name);
            write_u32(out, static_cast<uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(out, e.is_f32() ? 0u : 1u);
            write_u32(out, static_cast<uint32_t>(e.dims.size()));
            for (uint64_t d : e.dims) write_u64(out, d);
            if (e.is_f32()) {
                out.write(reinterpret_cast<const char*>(e.f32.data()),
                          static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
            } else {
                out.write(reinterpret_cast<const char*>(e.f64.data()),
                          static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
            }
        }
        if (!out) throw ConfigError("container: write to '" + path + "' failed");
    }

    static TensorContainer read(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("container: cannot open '" + path + "'");
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, "LSPT", 4) != 0)
            throw ConfigError("container: bad magic in '" + path + "'");
        const uint32_t version = read_u32(in, path);
        if (version != kVersion)
            throw ConfigError("container: unsupported version " + std::to_string(version));
        const uint32_t count = read_u32(in, path);
        TensorContainer c;
        for (uint32_t k = 0; k < count; ++k) {
            const uint32_t name_len = read_u32(in, path);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            const uint32_t dtype = read_u32(in, path);
            if (dtype > 1) throw ConfigError("container: unknown dtype " + std::to_string(dtype));
            const uint32_t rank = read_u32(in, path);
            std::vector<uint64_t> dims(rank);
            uint64_t n = 1;
            for (uint32_t r = 0; r < rank; ++r) {
                dims[r] = read_u64(in, path);
                n *= dims[r];
            }
            if (!in) throw ConfigError("container: truncated header in '" + path + "'");
            if (dtype == 0) {
                std::vector<float> data(n);
                in.read(reinterpret_cast<char*>(data.data()),
                        static_cast<std::streamsize>(n * sizeof(float)));
                if (!in) throw ConfigError("container: truncated data in '" + path + "'");
                c.put_f32(name, std::move(dims), std::move(data));
            } else {
                std::vector<double> data(n);
                in.read(reinterpret_cast<char*>(data.data()),
                        static_cast<std::streamsize>(n * sizeof(double)));
                if (!in) throw ConfigError("container: truncated data in '" + path + "'");
                c.put_f64(name, std::move(dims), std::move(data));
            }
        }
        in.peek();
        if (!in.eof()) throw ConfigError("container: trailing bytes in '" + path + "'");
        return c;
    }

private:
    void check_shape(const std::string& name, const std::vector<uint64_t>& dims, size_t n) const {
        uint64_t expect = 1;
        for (uint64_t d : dims) expect *= d;
        if (expect != n)
            throw ConfigError("container: '" + name + "' dims do not match data size");
        if (entries_.count(name))
            throw ConfigError("container: duplicate entry '" + name + "'");
    }

    static void write_u32(std::ofstream& out, uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    static void write_u64(std::ofstream& out, uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    }
    static uint32_t read_u32(std::ifstream& in, const std::string& path) {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw ConfigError("container: truncated header in '" + path + "'");
        return v;
    }
    static uint64_t read_u64(std::ifstream& in, const std::string& path) {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        if (!in) throw ConfigError("container: truncated header in '" + path + "'");
        return v;
    }

    std::map<std::string, TensorEntry> entries_;
    std::vector<std::string> order_;
};

}  // namespace lspt
