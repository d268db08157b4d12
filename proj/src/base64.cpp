#include "wallet/base64.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include "wallet/error.hpp"

namespace wallet {

namespace b64 = boost::beast::detail::base64;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::invalid_field, "base64 length");
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  std::size_t pad = 0;
  while (pad < 2 && pad < text.size() && text[text.size() - 1 - pad] == '=') ++pad;
  if (read + pad < text.size()) throw Error(Errc::invalid_field, "base64 alphabet");
  out.resize(written);
  return out;
}

}  // namespace wallet
