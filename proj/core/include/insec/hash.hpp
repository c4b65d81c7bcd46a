#pragma once

#include <string>
#include <string_view>

namespace insec {

/// Lowercase hex SHA-256 digest. Used for corpus and suite fingerprints.
std::string sha256_hex(std::string_view data);

}  // namespace insec
