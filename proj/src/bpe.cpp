#include "kpe_forge/bpe.hpp"

#include "kpe_forge/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace kpeforge {

namespace {

using Word = std::vector<std::string>;

Word toBytes(std::string_view piece) {
    Word w;
    w.reserve(piece.size());
    for (char c : piece) w.emplace_back(1, c);
    return w;
}

void applyMerge(Word& w, const std::string& left, const std::string& right) {
    Word out;
    out.reserve(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == left && w[i + 1] == right) {
            out.push_back(left + right);
            ++i;
        } else {
            out.push_back(w[i]);
        }
    }
    w = std::move(out);
}

std::string escape(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (c > 0x20 && c < 0x7f && c != '\\') {
            out.push_back(static_cast<char>(c));
        } else {
            char buf[5];
            std::snprintf(buf, sizeof buf, "\\x%02x", c);
            out += buf;
        }
    }
    return out;
}

std::string unescape(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out.push_back(s[i]);
            continue;
        }
        if (i + 3 >= s.size()) throw FormatError("truncated escape in BPE file");
        if (s[i + 1] != 'x') throw FormatError("bad escape in BPE file");
        out.push_back(static_cast<char>(std::stoi(s.substr(i + 2, 2), nullptr, 16)));
        i += 3;
    }
    return out;
}

} // namespace

std::vector<std::string> splitPieces(std::string_view line) {
    std::vector<std::string> pieces;
    std::string cur;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == ' ' && i > 0) {
            pieces.push_back(std::move(cur));
            cur.clear();
        }
        cur.push_back(line[i]);
    }
    if (!cur.empty()) pieces.push_back(std::move(cur));
    return pieces;
}

BpeVocab::BpeVocab(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges,
                   int textLength)
    : merges_(std::move(merges)), alphabetSize_(alphabet.size()), textLength_(textLength) {
    if (textLength <= 0) throw InvalidArgument("text length must be positive");
    auto addSymbol = [this](const std::string& s) {
        if (ids_.count(s)) return;
        ids_[s] = kSpecials + static_cast<int>(symbols_.size());
        symbols_.push_back(s);
    };
    for (const auto& s : alphabet) {
        if (s.size() != 1) throw FormatError("BPE alphabet entries must be single bytes");
        addSymbol(s);
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto& [l, rr] = merges_[r];
        if (!ids_.count(l) || !ids_.count(rr))
            throw FormatError("BPE merge " + std::to_string(r) + " uses a symbol not produced earlier");
        rank_.emplace(merges_[r], r);
        addSymbol(l + rr);
    }
}

const std::string& BpeVocab::symbol(int id) const {
    if (id < kSpecials || id >= size()) throw InvalidArgument("not a symbol id: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id - kSpecials)];
}

int BpeVocab::idOf(const std::string& symbol) const {
    auto it = ids_.find(symbol);
    return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::string> BpeVocab::segment(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& piece : splitPieces(text)) {
        Word w = toBytes(piece);
        while (w.size() > 1) {
            std::size_t best = merges_.size();
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                auto it = rank_.find({w[i], w[i + 1]});
                if (it != rank_.end()) best = std::min(best, it->second);
            }
            if (best == merges_.size()) break;
            applyMerge(w, merges_[best].first, merges_[best].second);
        }
        out.insert(out.end(), w.begin(), w.end());
    }
    return out;
}

BpeVocab bpeTrain(const std::vector<std::string>& corpus, int symbolBudget, int textLength) {
    if (corpus.empty()) throw InvalidArgument("BPE corpus is empty");
    std::map<std::string, std::size_t> pieceFreq;
    std::set<std::string> alphabetSet;
    for (const auto& line : corpus) {
        for (auto& piece : splitPieces(line)) {
            for (char c : piece) alphabetSet.insert(std::string(1, c));
            ++pieceFreq[piece];
        }
    }
    if (alphabetSet.empty()) throw InvalidArgument("BPE corpus has no characters");
    std::vector<std::string> alphabet(alphabetSet.begin(), alphabetSet.end());
    if (symbolBudget < static_cast<int>(alphabet.size()))
        throw InvalidArgument("vocab size " + std::to_string(symbolBudget) + " is smaller than the base alphabet (" +
                              std::to_string(alphabet.size()) + ")");

    std::vector<std::pair<Word, std::size_t>> words;
    for (const auto& [piece, freq] : pieceFreq) words.emplace_back(toBytes(piece), freq);

    std::vector<std::pair<std::string, std::string>> merges;
    std::set<std::string> symbols(alphabet.begin(), alphabet.end());
    while (static_cast<int>(symbols.size()) < symbolBudget) {
        std::map<std::pair<std::string, std::string>, std::size_t> counts;
        for (const auto& [w, freq] : words)
            for (std::size_t i = 0; i + 1 < w.size(); ++i) counts[{w[i], w[i + 1]}] += freq;
        if (counts.empty()) break;
        // std::map iterates pairs lexicographically, so strict > keeps the
        // smallest pair among equal counts.
        auto best = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it)
            if (it->second > best->second) best = it;
        const auto pair = best->first;
        merges.push_back(pair);
        symbols.insert(pair.first + pair.second);
        for (auto& [w, freq] : words) applyMerge(w, pair.first, pair.second);
    }
    return BpeVocab(std::move(alphabet), std::move(merges), textLength);
}

std::vector<int> encodeText(std::string_view text, const BpeVocab& vocab) {
    std::vector<int> ids;
    for (const auto& s : vocab.segment(text)) {
        if (static_cast<int>(ids.size()) == vocab.textLength()) break;
        ids.push_back(vocab.idOf(s));
    }
    ids.resize(static_cast<std::size_t>(vocab.textLength()), BpeVocab::kPad);
    return ids;
}

std::string decodeText(const std::vector<int>& ids, const BpeVocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == BpeVocab::kPad || id == BpeVocab::kBos) continue;
        if (id == BpeVocab::kUnk) {
            out.push_back('?');
            continue;
        }
        out += vocab.symbol(id);
    }
    return out;
}

void saveBpe(const std::filesystem::path& path, const BpeVocab& vocab) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "#kpe-forge-bpe v1\n#text_length " << vocab.textLength() << "\n#alphabet";
    for (std::size_t i = 0; i < vocab.alphabetSize(); ++i)
        out << ' ' << escape(vocab.symbol(BpeVocab::kSpecials + static_cast<int>(i)));
    out << '\n';
    for (const auto& [l, r] : vocab.merges()) out << escape(l) << ' ' << escape(r) << '\n';
}

BpeVocab loadBpe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open BPE vocabulary " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "#kpe-forge-bpe v1") throw FormatError("not a kpe-forge BPE file");
    int textLength = 0;
    std::vector<std::string> alphabet;
    std::vector<std::pair<std::string, std::string>> merges;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (line.rfind("#text_length", 0) == 0) {
            std::string tag;
            ls >> tag >> textLength;
        } else if (line.rfind("#alphabet", 0) == 0) {
            std::string tag, tok;
            ls >> tag;
            while (ls >> tok) alphabet.push_back(unescape(tok));
        } else {
            std::string l, r, extra;
            if (!(ls >> l >> r) || (ls >> extra)) throw FormatError("BPE merge lines must hold two symbols");
            merges.emplace_back(unescape(l), unescape(r));
        }
    }
    return BpeVocab(std::move(alphabet), std::move(merges), textLength);
}

} // namespace kpeforge
