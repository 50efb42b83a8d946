#ifndef DTP_TEXTPIPE_HPP
#define DTP_TEXTPIPE_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/rng.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Closed attribute vocabulary. Captions are built from four body parts in a
// fixed head -> upper -> lower -> foot order, each described by a
// color + garment phrase.
// ---------------------------------------------------------------------------

enum class BodyPart : int { Head = 0, Upper = 1, Lower = 2, Foot = 3 };

constexpr int kNumBodyParts = 4;

inline const std::array<std::string, 6>& attribute_colors() {
    static const std::array<std::string, 6> colors{"black", "white", "red",
                                                   "blue",  "green", "grey"};
    return colors;
}

inline const std::array<std::string, 3>& attribute_garments(BodyPart part) {
    static const std::array<std::array<std::string, 3>, 4> garments{{
        {"hair", "hat", "cap"},
        {"T-shirts", "shirts", "jacket"},
        {"shorts", "pants", "jeans"},
        {"shoes", "boots", "sandals"},
    }};
    return garments[static_cast<int>(part)];
}

/// One body-part attribute: a color index and a garment index into the
/// closed lists above.
struct Attribute {
    int color = 0;
    int garment = 0;

    std::string phrase(BodyPart part) const {
        return attribute_colors()[color] + " " + attribute_garments(part)[garment];
    }
};

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer.
// ---------------------------------------------------------------------------

class Vocabulary {
  public:
    /// The full closed vocabulary: template words, colors, garments,
    /// punctuation. Index = position in the list.
    static Vocabulary standard() {
        Vocabulary v;
        v.add("The");
        v.add("man");
        v.add("person");
        v.add("has");
        for (const auto& c : attribute_colors()) v.add(c);
        for (int p = 0; p < kNumBodyParts; ++p)
            for (const auto& g : attribute_garments(static_cast<BodyPart>(p))) v.add(g);
        v.add(",");
        v.add(".");
        return v;
    }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end())
            throw DataError("word not in vocabulary: '" + word + "'");
        return it->second;
    }

    const std::string& word(int id) const {
        if (id < 0 || id >= static_cast<int>(words_.size()))
            throw DataError("token id out of range: " + std::to_string(id));
        return words_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return words_.size(); }
    int comma_id() const { return id(","); }
    int period_id() const { return id("."); }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write vocabulary file: " + path);
        for (const auto& w : words_) out << w << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read vocabulary file: " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) v.add(line);
        return v;
    }

    bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

  private:
    void add(const std::string& w) {
        index_[w] = static_cast<int>(words_.size());
        words_.push_back(w);
    }

    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

/// Token ids plus structural markers. Commas are ordinary tokens whose
/// positions are recorded for comma-wise splitting downstream.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::size_t> comma_positions;

    std::size_t length() const { return ids.size(); }
};

inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    TokenSequence seq;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            seq.ids.push_back(vocab.id(word));
            word.clear();
        }
    };
    for (char c : text) {
        if (c == ' ') {
            flush();
        } else if (c == ',' || c == '.') {
            flush();
            if (c == ',') seq.comma_positions.push_back(seq.ids.size());
            seq.ids.push_back(vocab.id(std::string(1, c)));
        } else {
            word.push_back(c);
        }
    }
    flush();
    return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (int id : seq.ids) {
        const std::string& w = vocab.word(id);
        if (w == "," || w == ".") {
            out += w;
        } else {
            if (!out.empty()) out += ' ';
            out += w;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Token embedding.
// ---------------------------------------------------------------------------

/// Learned token embedding plus learned positional embedding, both trainable.
struct TokenEmbedding {
    Tensor table;       // [vocab x d]
    Tensor positional;  // [max_positions x d]
    std::size_t dim = 0;

    static TokenEmbedding init(std::size_t vocab_size, std::size_t dim, RandomSource& rng,
                               std::size_t max_positions = 32, double init_scale = 0.02) {
        TokenEmbedding e;
        e.dim = dim;
        e.table = Tensor::randn({vocab_size, dim}, rng, init_scale, true);
        e.positional = Tensor::randn({max_positions, dim}, rng, init_scale, true);
        return e;
    }

    std::vector<Tensor> parameters() const { return {table, positional}; }
};

/// Embed a token sequence: row i = table[id_i] (+ positional[i] unless
/// disabled). Differentiable into both tables.
inline Tensor embed(const TokenSequence& tokens, const TokenEmbedding& emb,
                    bool with_positions = true) {
    if (tokens.ids.empty()) throw ShapeError("cannot embed an empty token sequence");
    if (with_positions && tokens.ids.size() > emb.positional.rows())
        throw ShapeError("sequence length " + std::to_string(tokens.ids.size()) +
                         " exceeds positional capacity " + std::to_string(emb.positional.rows()));
    std::vector<Tensor> rows;
    rows.reserve(tokens.ids.size());
    for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
        const int id = tokens.ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= emb.table.rows())
            throw DataError("token id out of embedding range: " + std::to_string(id));
        Tensor r = slice_rows(emb.table, static_cast<std::size_t>(id), 1);
        if (with_positions) r = add(r, slice_rows(emb.positional, i, 1));
        rows.push_back(r);
    }
    return concat_rows(rows);
}

// ---------------------------------------------------------------------------
// Person-knowledge prompt store.
// ---------------------------------------------------------------------------

/// Per-identity learnable prompt blocks, reinitialized at every domain
/// boundary. Iteration order is by identity id (deterministic).
struct PKPStore {
    std::map<int, Tensor> blocks;
    std::size_t tokens_per_identity = 4;
    std::size_t dim = 32;
    double init_scale = 0.02;

    void reinit(const std::vector<int>& identities, RandomSource& rng) {
        blocks.clear();
        for (int id : identities) {
            if (blocks.count(id))
                throw ConfigError("duplicate identity id in PKP reinit: " + std::to_string(id));
            blocks[id] = Tensor::randn({tokens_per_identity, dim}, rng, init_scale, true);
        }
    }

    void reinit(const std::vector<int>& identities, std::uint64_t seed) {
        RandomSource rng(seed);
        reinit(identities, rng);
    }

    const Tensor& block(int identity) const {
        auto it = blocks.find(identity);
        if (it == blocks.end())
            throw ContractError("no PKP block for identity " + std::to_string(identity));
        return it->second;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        ps.reserve(blocks.size());
        for (const auto& [id, t] : blocks) ps.push_back(t);
        return ps;
    }

    std::size_t size() const { return blocks.size(); }
};

}  // namespace dtp

#endif  // DTP_TEXTPIPE_HPP
