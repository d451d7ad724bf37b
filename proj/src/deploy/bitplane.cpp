#include "cnnbp/deploy.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::deploy {

TernaryCode TernaryCode::from_packed(std::uint8_t bits) {
  if (bits > 3 || bits == 2) throw FormatError("illegal ternary code " + std::to_string(bits), 0);
  return {(bits & 2u) != 0, (bits & 1u) != 0};
}

void BitPlane::clear_tail() {
  if (bits_ % 64 != 0 && !words_.empty()) words_.back() &= (std::uint64_t{1} << (bits_ % 64)) - 1;
}

void BitPlane::shift_up(std::size_t n) {
  const std::size_t W = words_.size();
  const std::size_t ws = n / 64, bs = n % 64;
  for (std::size_t i = W; i-- > 0;) {
    std::uint64_t v = 0;
    if (i >= ws) {
      v = words_[i - ws] << bs;
      if (bs != 0 && i >= ws + 1) v |= words_[i - ws - 1] >> (64 - bs);
    }
    words_[i] = v;
  }
  clear_tail();
}

void BitPlane::shift_down(std::size_t n) {
  const std::size_t W = words_.size();
  const std::size_t ws = n / 64, bs = n % 64;
  for (std::size_t i = 0; i < W; ++i) {
    std::uint64_t v = 0;
    if (i + ws < W) {
      v = words_[i + ws] >> bs;
      if (bs != 0 && i + ws + 1 < W) v |= words_[i + ws + 1] << (64 - bs);
    }
    words_[i] = v;
  }
}

void BitPlane::copy_bits(const BitPlane& src, std::size_t from, std::size_t to, std::size_t count) {
  for (std::size_t k = 0; k < count; ++k) set(to + k, src.get(from + k));
}

std::vector<std::uint8_t> BitPlane::to_bytes() const {
  std::vector<std::uint8_t> out((bits_ + 7) / 8, 0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b] = static_cast<std::uint8_t>(words_[b / 8] >> (8 * (b % 8)));
  }
  return out;
}

BitPlane BitPlane::from_bytes(std::span<const std::uint8_t> bytes, std::size_t bits) {
  BitPlane p(bits);
  for (std::size_t b = 0; b < bytes.size() && b < (bits + 7) / 8; ++b) {
    p.words_[b / 8] |= static_cast<std::uint64_t>(bytes[b]) << (8 * (b % 8));
  }
  p.clear_tail();
  return p;
}

}  // namespace cnnbp::deploy
