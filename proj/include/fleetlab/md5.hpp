#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace fleetlab {

/// Incremental MD5 (RFC 1321). Used as a module version tag, not as a
/// security boundary.
class Md5 {
public:
    Md5();
    void update(const void* data, std::size_t len);
    std::array<unsigned char, 16> finish();

private:
    void process_block(const unsigned char* block);

    std::uint32_t state_[4];
    std::uint64_t total_len_;
    unsigned char buffer_[64];
    std::size_t buffer_len_;
};

/// 32 lowercase hex chars of md5(text).
std::string md5_hex(std::string_view text);

}  // namespace fleetlab
