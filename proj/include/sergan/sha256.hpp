#ifndef SERGAN_SHA256_HPP_
#define SERGAN_SHA256_HPP_

#include <string>

namespace sergan {

// Hex digest of a byte string / of a file's contents.
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

}  // namespace sergan

#endif  // SERGAN_SHA256_HPP_
