#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "lr/config.hpp"
#include "lr/errors.hpp"
#include "lr/rng.hpp"
#include "lr/tensor.hpp"

namespace lr {

enum class CondVariant { personalized, token_removed, neutral, empty };

inline const char* to_string(CondVariant v) {
    switch (v) {
        case CondVariant::personalized: return "personalized";
        case CondVariant::token_removed: return "token_removed";
        case CondVariant::neutral: return "neutral";
        case CondVariant::empty: return "empty";
    }
    return "?";
}

// A tokenized prompt with its embedding matrix (n_tokens x d_text).
struct TextCondition {
    std::vector<std::string> tokens;
    Tensor embedding;
    CondVariant variant = CondVariant::empty;

    std::size_t token_count() const { return tokens.size(); }
};

inline std::vector<std::string> tokenize(const std::string& prompt) {
    // Whitespace split with a leading begin-of-sequence marker.
    std::vector<std::string> tokens = {"<bos>"};
    std::istringstream ss(prompt);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    return tokens;
}

// Deterministic token embedder. Ordinary tokens hash into dimensions
// 1..d_text-1; dimension 0 is reserved for the special token, which gets a
// fixed unit vector there. Removing the special token is therefore exact:
// no other token leaks into its subspace.
class ToyTextEncoder {
public:
    ToyTextEncoder(std::uint64_t seed, int d_text, std::string special_token)
        : seed_(seed), d_text_(d_text), special_(std::move(special_token)) {
        if (d_text_ < 2) throw validation_error("d_text must be >= 2");
    }

    int d_text() const { return d_text_; }
    const std::string& special_token() const { return special_; }

    Tensor encode(const std::vector<std::string>& tokens) const {
        Tensor e({tokens.size(), static_cast<std::size_t>(d_text_)});
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (tokens[t] == special_) {
                e.at(t, 0) = 1.0f;
                continue;
            }
            SplitMix64 g(seed_ ^ fnv1a64(tokens[t]));
            for (int d = 1; d < d_text_; ++d)
                e.at(t, d) = static_cast<float>(g.next_symmetric(0.5));
        }
        return e;
    }

    TextCondition condition(const std::string& prompt, CondVariant v) const {
        TextCondition c;
        c.tokens = tokenize(prompt);
        c.embedding = encode(c.tokens);
        c.variant = v;
        return c;
    }

    TextCondition empty_condition() const {
        return condition("", CondVariant::empty);
    }

private:
    std::uint64_t seed_;
    int d_text_;
    std::string special_;
};

struct ConditionSet {
    TextCondition y_p;        // prompt with the special token
    TextCondition y_p_minus;  // special token removed / class word substituted
    TextCondition y_r;        // neutral "a photo of <special>"
};

// Splits the prompt into the three conditions the pipeline runs on. The
// prompt must contain the special token exactly once; the class word, when
// given, takes its slot in the token-removed variant.
inline ConditionSet derive_conditions(const ToyTextEncoder& enc,
                                      const std::string& prompt,
                                      const std::string& class_word = "") {
    const std::string& special = enc.special_token();
    std::vector<std::string> toks = tokenize(prompt);

    int n_special = 0;
    for (const auto& t : toks)
        if (t == special) ++n_special;
    if (n_special != 1)
        throw validation_error("prompt must contain the special token '" +
                               special + "' exactly once, found " +
                               std::to_string(n_special));

    std::vector<std::string> minus_toks;
    for (const auto& t : toks) {
        if (t == special) {
            if (!class_word.empty()) minus_toks.push_back(class_word);
        } else {
            minus_toks.push_back(t);
        }
    }

    ConditionSet out;
    out.y_p = TextCondition{toks, enc.encode(toks), CondVariant::personalized};
    out.y_p_minus = TextCondition{minus_toks, enc.encode(minus_toks),
                                  CondVariant::token_removed};
    out.y_r = enc.condition("a photo of " + special, CondVariant::neutral);
    return out;
}

// Index of the special token within a condition's token list.
inline std::size_t special_token_index(const TextCondition& c,
                                       const std::string& special) {
    for (std::size_t i = 0; i < c.tokens.size(); ++i)
        if (c.tokens[i] == special) return i;
    throw validation_error("condition does not contain the special token '" +
                           special + "'");
}

}  // namespace lr
