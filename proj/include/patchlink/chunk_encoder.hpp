#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "patchlink/repo_window.hpp"

namespace patchlink {

using TokenId = std::uint32_t;

class TokenizerProvider {
 public:
  virtual ~TokenizerProvider() = default;

  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::size_t vocab_size() const = 0;

  virtual TokenId pad_id() const = 0;
  virtual TokenId cls_id() const = 0;
  virtual TokenId sep_id() const = 0;
  virtual TokenId eos_id() const = 0;
};

// Lower-cased words (runs of letters, digits and '_') and single punctuation
// characters, each hashed into a fixed vocabulary after four reserved
// specials: PAD=0, CLS=1, SEP=2, EOS=3.
class HashingTokenizer final : public TokenizerProvider {
 public:
  static constexpr std::size_t kDefaultVocab = 50000;
  static constexpr TokenId kReserved = 4;

  explicit HashingTokenizer(std::size_t vocab_size = kDefaultVocab);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::size_t vocab_size() const override { return vocab_size_; }
  TokenId pad_id() const override { return 0; }
  TokenId cls_id() const override { return 1; }
  TokenId sep_id() const override { return 2; }
  TokenId eos_id() const override { return 3; }

  // Id of a single already-lower-cased token.
  TokenId token_id(std::string_view token) const noexcept;

  // The pieces `encode` hashes, in order.
  static std::vector<std::string> split(std::string_view text);

 private:
  std::size_t vocab_size_;
};

// [CLS] message [SEP] diff [EOS]. token_type_ids is 0 up to and including
// SEP and 1 afterwards; attention_mask is 1 on every non-pad position.
struct ChunkEncoding {
  std::vector<TokenId> input_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::uint8_t> token_type_ids;
  std::size_t file_index = 0;
  std::size_t message_tokens = 0;  // after truncation
  std::size_t diff_tokens = 0;     // after truncation
  bool truncated = false;

  std::size_t size() const noexcept { return input_ids.size(); }
};

inline constexpr std::size_t kDefaultMaxLen = 512;

// Over-long input loses diff tokens first, then message tokens; the three
// specials always survive. Requires max_len >= 8.
ChunkEncoding encode_file_chunk(std::string_view message, const FileDiff& diff, const TokenizerProvider& tok,
                                std::size_t max_len = kDefaultMaxLen, std::size_t file_index = 0);

// One encoding per scoreable file of the commit; file_index refers to the
// position in commit.files.
std::vector<ChunkEncoding> encode_commit(const CommitRecord& commit, const TokenizerProvider& tok,
                                         std::size_t max_len = kDefaultMaxLen);

// Right-pads to `length` for providers that want fixed-size batches.
ChunkEncoding pad_to(ChunkEncoding chunk, std::size_t length, const TokenizerProvider& tok);

}  // namespace patchlink
