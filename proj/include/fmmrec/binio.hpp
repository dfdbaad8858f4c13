#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "fmmrec/common.hpp"
#include "fmmrec/mat.hpp"

namespace fmmrec::binio {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u8(std::ostream& out, std::uint8_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError(cat("truncated file while reading ", what));
    return v;
}

inline std::uint8_t read_u8(std::istream& in, const std::string& what) {
    std::uint8_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError(cat("truncated file while reading ", what));
    return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const std::string& path) {
    char buf[4] = {};
    in.read(buf, 4);
    if (!in || std::string(buf, 4) != std::string(magic, 4))
        throw DataError(cat(path, ": bad magic, expected ", std::string(magic, 4)));
}

inline void write_f32_data(std::ostream& out, const Mat<float>& m) {
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
}

inline void read_f32_data(std::istream& in, Mat<float>& m, const std::string& what) {
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!in) throw DataError(cat("truncated file while reading ", what));
}

}  // namespace fmmrec::binio
