#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "scpr/data/vocab.hpp"

namespace scpr {

inline constexpr std::size_t kDefaultChunk = 200;

/// Splits on whitespace and detaches every ASCII punctuation character into
/// its own token.
std::vector<std::string> tokenize_words(std::string_view text);

/// Non-empty lines of a UTF-8 file, one document per line. Throws DataError
/// when the file cannot be read or holds no document.
std::vector<std::string> read_documents(const std::string& path);

/// Each document becomes sequences [BOS, w_1 .. w_n] with n <= chunk.
std::vector<std::vector<int>> encode_documents(const std::vector<std::string>& docs,
                                               const Vocab& vocab,
                                               std::size_t chunk = kDefaultChunk);

/// Vocabulary over the tokenised documents.
Vocab build_vocab(const std::vector<std::string>& docs, std::size_t cap);

/// Fraction of non-BOS tokens mapped to UNK.
double unk_rate(const std::vector<std::vector<int>>& sequences);

}  // namespace scpr
