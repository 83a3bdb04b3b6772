#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kpeforge {

/// Byte-pair-encoding vocabulary. Lines are split into pieces that start at
/// each space (so " red" is one piece) and merges never cross piece borders;
/// concatenating decoded pieces therefore reproduces the input exactly.
///
/// Id layout: 0 pad, 1 bos, 2 unk, then the base alphabet (sorted bytes),
/// then one id per distinct merged symbol in merge order.
class BpeVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kUnk = 2;
    static constexpr int kSpecials = 3;

    BpeVocab() = default;
    BpeVocab(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges,
             int textLength);

    int size() const noexcept { return kSpecials + static_cast<int>(symbols_.size()); }
    int textLength() const noexcept { return textLength_; }
    std::size_t alphabetSize() const noexcept { return alphabetSize_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }
    const std::string& symbol(int id) const;
    int idOf(const std::string& symbol) const;  // kUnk when absent

    // Subword symbols of a line (before id mapping and padding).
    std::vector<std::string> segment(std::string_view text) const;

private:
    std::vector<std::string> symbols_;
    std::map<std::string, int> ids_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::map<std::pair<std::string, std::string>, std::size_t> rank_;
    std::size_t alphabetSize_{0};
    int textLength_{0};
};

// Pieces of a line: a new piece starts at every space after position 0.
std::vector<std::string> splitPieces(std::string_view line);

/// Learns merges until alphabet + merges reaches `symbolBudget` or no pair
/// remains. Most frequent pair wins; ties go to the lexicographically smaller
/// (left, right) pair.
BpeVocab bpeTrain(const std::vector<std::string>& corpus, int symbolBudget, int textLength);

// Exactly textLength ids: merges applied, truncated, then pad-filled.
std::vector<int> encodeText(std::string_view text, const BpeVocab& vocab);
// Drops pad/bos; unk decodes as '?'.
std::string decodeText(const std::vector<int>& ids, const BpeVocab& vocab);

// Plain text: a "#kpe-forge-bpe v1" header, "#text_length", "#alphabet",
// then one merge per line as "left right" with bytes outside 0x21..0x7e
// (and '\') written as \xHH.
void saveBpe(const std::filesystem::path& path, const BpeVocab& vocab);
BpeVocab loadBpe(const std::filesystem::path& path);

} // namespace kpeforge
