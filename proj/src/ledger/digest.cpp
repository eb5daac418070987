#include "eve/error.hpp"
#include "eve/ledger.hpp"

#include <openssl/evp.h>

#include <memory>

namespace eve::ledger {

Digest sha256(std::string_view bytes) {
  Digest out{};
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size())
    throw Error(ErrorCode::IoFailure, "sha256 failed");
  return out;
}

std::string to_hex(const Digest& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

Digest from_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(ErrorCode::ParseError, "digest must be 64 hex digits");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::ParseError, "bad hex digit");
  };
  Digest d{};
  for (std::size_t i = 0; i < 32; ++i)
    d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
  return d;
}

std::string canonical(const json& value) { return value.dump(); }

json LedgerBlock::header() const {
  return json{{"index", index},
              {"prev_hash", to_hex(prev_hash)},
              {"payload_hash", to_hex(payload_hash)},
              {"timestamp", timestamp}};
}

Digest block_digest(const LedgerBlock& block) { return sha256(canonical(block.header())); }

ChainCheck verify_chain(std::span<const LedgerBlock> blocks) {
  Digest prev{};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const LedgerBlock& b = blocks[i];
    auto bad = [&](const char* why) { return ChainCheck{false, static_cast<std::uint64_t>(i), why}; };
    if (b.index != i) return bad("index out of sequence");
    if (b.prev_hash != prev) return bad("previous-hash link broken");
    if (sha256(b.payload) != b.payload_hash) return bad("payload hash mismatch");
    prev = block_digest(b);
  }
  return {};
}

}  // namespace eve::ledger
