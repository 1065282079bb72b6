#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "dplan/common.hpp"

namespace dplan {

// Character-level vocabulary over the planner grammar's alphabet. Coordinates
// decompose into one token per digit, so the integer and fractional parts of
// every waypoint are predicted digit by digit.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocab() {
    symbols_ = {"<pad>", "<bos>", "<eos>"};
    auto add = [&](char c) {
      char_to_id_[c] = static_cast<int>(symbols_.size());
      symbols_.push_back(std::string(1, c));
    };
    for (char c = '0'; c <= '9'; ++c) add(c);
    for (char c = 'A'; c <= 'Z'; ++c) add(c);
    for (char c = 'a'; c <= 'z'; ++c) add(c);
    for (char c : {' ', '\n', '.', ',', ':', '(', ')', '-', '&', '[', ']'}) add(c);
  }

  int size() const { return static_cast<int>(symbols_.size()); }

  const std::vector<std::string>& symbols() const { return symbols_; }

  bool contains(char c) const { return char_to_id_.count(c) != 0; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
      auto it = char_to_id_.find(text[i]);
      if (it == char_to_id_.end())
        fail("encode: character outside the vocabulary at position " + std::to_string(i));
      ids.push_back(it->second);
    }
    return ids;
  }

  // Inverse of encode on its image; PAD/BOS/EOS are stripped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id >= size()) fail("decode: unknown token id " + std::to_string(id));
      if (id <= kEos) continue;
      out += symbols_[id];
    }
    return out;
  }

  // Checkpoints persist the symbol list; a loaded list must match bit for bit.
  static Vocab from_symbols(const std::vector<std::string>& symbols) {
    Vocab v;
    require(symbols == v.symbols_, "vocab: serialized symbol table does not match this build");
    return v;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<char, int> char_to_id_;
};

inline const Vocab& vocab() {
  static const Vocab v;
  return v;
}

}  // namespace dplan
