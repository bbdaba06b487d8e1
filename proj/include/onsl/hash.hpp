#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace onsl {

// 64-bit FNV-1a, used for config and batch fingerprints.
class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= c[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    template <class T>
    void value(const T& v) {
        bytes(&v, sizeof(T));
    }
    void string(std::string_view s) {
        value(static_cast<std::uint64_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    Fnv1a h;
    h.bytes(s.data(), s.size());
    return h.digest();
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace onsl
