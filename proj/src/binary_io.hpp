#pragma once

// Little-endian stream helpers shared by the cube and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hcanet/errors.hpp"

namespace hcanet::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

template <typename U>
void write_le(std::ostream& os, U value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

inline void write_f32(std::ostream& os, const float* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

/// Reader that tracks its byte offset for FormatError reports.
class Reader {
public:
    Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

    std::uint64_t offset() const { return offset_; }

    void bytes(void* dst, std::size_t n, const char* field) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(is_.gcount());
        if (got != n) {
            throw FormatError(what_ + ": truncated " + field + ", expected " + std::to_string(n) +
                                  " bytes, found " + std::to_string(got),
                              offset_ + got);
        }
        offset_ += n;
    }

    template <typename U>
    U le(const char* field) {
        U v{};
        bytes(&v, sizeof(U), field);
        return v;
    }

    void f32(float* dst, std::size_t n, const char* field) { bytes(dst, n * sizeof(float), field); }

    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& is_;
    std::string what_;
    std::uint64_t offset_ = 0;
};

}  // namespace hcanet::detail
