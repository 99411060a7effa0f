#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace detpro {

// SHA-256 of a byte string (FIPS 180-4). Used for the 32-byte config digest
// embedded in checkpoints and reports.
std::array<std::uint8_t, 32> sha256(std::string_view bytes);

std::string to_hex(const std::array<std::uint8_t, 32>& digest);

} // namespace detpro
