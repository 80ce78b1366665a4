#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpg/lexicon.hpp"

namespace cpg {

struct TextToken {
  std::string surface;
  int begin = 0;  // char offsets into the owning text, half-open
  int end = 0;
};

using TokenSpan = std::pair<int, int>;  // half-open token-index interval

struct Caption {
  std::string text;
  std::vector<TextToken> tokens;
  std::optional<TokenSpan> brand_span;  // covers the whole "Brand: <brand>" section
  TokenSpan title_span{0, 0};           // covers "Title: <title>"
  std::vector<TokenSpan> noun_phrases;  // within title_span, disjoint, left-to-right

  int n_tokens() const { return static_cast<int>(tokens.size()); }
  std::string span_surface(const TokenSpan& s) const;
};

// Whitespace/punctuation split; punctuation tokens retained; lossless span map.
std::vector<TextToken> tokenize(const std::string& text);

// "Brand: <brand>, Title: <title>"; brand empty -> "Title: <title>" with no
// brand_span. noun_phrases filled from the lexicon when one is given.
Caption craft_caption(const std::string& brand,
                      const std::vector<std::string>& title_tokens);
Caption craft_caption(const std::string& brand,
                      const std::vector<std::string>& title_tokens,
                      const Lexicon& lexicon);

// One interval per maximal ADJ* NOUN run; a bare NOUN yields a singleton.
std::vector<TokenSpan> extract_noun_phrases(const std::vector<std::string>& tokens,
                                            const Lexicon& lexicon);

}  // namespace cpg
