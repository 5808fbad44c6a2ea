#include "patchlink/chunk_encoder.hpp"

#include <algorithm>
#include <cctype>

#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"

namespace patchlink {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '_' || c >= 0x80; }

}  // namespace

HashingTokenizer::HashingTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size_ <= kReserved) throw Error(Errc::invalid_argument, "vocabulary too small");
}

std::vector<std::string> HashingTokenizer::split(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (word_char(c)) {
      std::string word;
      while (i < text.size() && word_char(static_cast<unsigned char>(text[i]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      pieces.push_back(std::move(word));
    } else {
      pieces.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return pieces;
}

TokenId HashingTokenizer::token_id(std::string_view token) const noexcept {
  return kReserved + static_cast<TokenId>(fnv1a64(token) % (vocab_size_ - kReserved));
}

std::vector<TokenId> HashingTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& piece : split(text)) ids.push_back(token_id(piece));
  return ids;
}

ChunkEncoding encode_file_chunk(std::string_view message, const FileDiff& diff, const TokenizerProvider& tok,
                                std::size_t max_len, std::size_t file_index) {
  if (max_len < 8) throw Error(Errc::invalid_argument, "max_len must be at least 8");
  const auto msg = tok.encode(message);
  const auto code = tok.encode(diff.patch_text);

  const std::size_t capacity = max_len - 3;
  const std::size_t msg_keep = std::min(msg.size(), capacity);
  const std::size_t diff_keep = std::min(code.size(), capacity - msg_keep);

  ChunkEncoding enc;
  enc.file_index = file_index;
  enc.message_tokens = msg_keep;
  enc.diff_tokens = diff_keep;
  enc.truncated = msg_keep < msg.size() || diff_keep < code.size();

  const std::size_t n = msg_keep + diff_keep + 3;
  enc.input_ids.reserve(n);
  enc.input_ids.push_back(tok.cls_id());
  enc.input_ids.insert(enc.input_ids.end(), msg.begin(), msg.begin() + static_cast<std::ptrdiff_t>(msg_keep));
  enc.input_ids.push_back(tok.sep_id());
  enc.input_ids.insert(enc.input_ids.end(), code.begin(), code.begin() + static_cast<std::ptrdiff_t>(diff_keep));
  enc.input_ids.push_back(tok.eos_id());

  enc.attention_mask.assign(n, 1);
  enc.token_type_ids.assign(n, 1);
  std::fill_n(enc.token_type_ids.begin(), msg_keep + 2, std::uint8_t{0});
  return enc;
}

std::vector<ChunkEncoding> encode_commit(const CommitRecord& commit, const TokenizerProvider& tok,
                                         std::size_t max_len) {
  std::vector<ChunkEncoding> chunks;
  for (std::size_t i = 0; i < commit.files.size(); ++i) {
    if (!commit.files[i].scoreable()) continue;
    chunks.push_back(encode_file_chunk(commit.message, commit.files[i], tok, max_len, i));
  }
  return chunks;
}

ChunkEncoding pad_to(ChunkEncoding chunk, std::size_t length, const TokenizerProvider& tok) {
  if (chunk.size() >= length) return chunk;
  chunk.input_ids.resize(length, tok.pad_id());
  chunk.attention_mask.resize(length, 0);
  chunk.token_type_ids.resize(length, 0);
  return chunk;
}

}  // namespace patchlink
