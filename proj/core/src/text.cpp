#include "cpg/text.hpp"

#include <cctype>
#include <stdexcept>

namespace cpg {

std::string Caption::span_surface(const TokenSpan& s) const {
  std::string out;
  for (int i = s.first; i < s.second; ++i) {
    if (!out.empty()) out += " ";
    out += tokens[i].surface;
  }
  return out;
}

namespace {
bool is_punct(char c) {
  return c == ':' || c == ',' || c == ';' || c == '.' || c == '!' || c == '?';
}
}  // namespace

std::vector<TextToken> tokenize(const std::string& text) {
  std::vector<TextToken> tokens;
  int i = 0;
  const int n = static_cast<int>(text.size());
  while (i < n) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    if (is_punct(text[i])) {
      tokens.push_back({std::string(1, text[i]), i, i + 1});
      ++i;
      continue;
    }
    int start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(text[i])) &&
           !is_punct(text[i]))
      ++i;
    tokens.push_back({text.substr(start, i - start), start, i});
  }
  return tokens;
}

std::vector<TokenSpan> extract_noun_phrases(const std::vector<std::string>& tokens,
                                            const Lexicon& lexicon) {
  std::vector<TokenSpan> spans;
  int consumed = 0;  // tokens at indices < consumed already belong to a phrase
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (lexicon.classify(tokens[i]) != Pos::Noun) continue;
    int start = i;
    while (start > consumed && lexicon.classify(tokens[start - 1]) == Pos::Adj)
      --start;
    spans.emplace_back(start, i + 1);
    consumed = i + 1;
  }
  return spans;
}

Caption craft_caption(const std::string& brand,
                      const std::vector<std::string>& title_tokens) {
  if (title_tokens.empty())
    throw std::runtime_error("craft_caption: empty title");
  std::string title;
  for (const auto& t : title_tokens) {
    if (!title.empty()) title += " ";
    title += t;
  }
  Caption cap;
  if (!brand.empty())
    cap.text = "Brand: " + brand + ", Title: " + title;
  else
    cap.text = "Title: " + title;
  cap.tokens = tokenize(cap.text);

  // locate the "Title" prefix token; everything before the separating comma is
  // the brand section
  int title_tok = -1;
  for (int i = 0; i < cap.n_tokens(); ++i) {
    if (cap.tokens[i].surface == "Title" &&
        i + 1 < cap.n_tokens() && cap.tokens[i + 1].surface == ":") {
      title_tok = i;
      break;
    }
  }
  if (title_tok < 0) throw std::runtime_error("craft_caption: malformed caption");
  if (!brand.empty()) {
    int comma = title_tok - 1;  // "... , Title : ..."
    cap.brand_span = TokenSpan{0, comma};
  }
  cap.title_span = {title_tok, cap.n_tokens()};
  return cap;
}

Caption craft_caption(const std::string& brand,
                      const std::vector<std::string>& title_tokens,
                      const Lexicon& lexicon) {
  Caption cap = craft_caption(brand, title_tokens);
  // chunk only the title words (skip the "Title", ":" prefix tokens)
  int base = cap.title_span.first + 2;
  std::vector<std::string> words;
  for (int i = base; i < cap.title_span.second; ++i)
    words.push_back(cap.tokens[i].surface);
  for (const auto& [s, e] : extract_noun_phrases(words, lexicon))
    cap.noun_phrases.emplace_back(base + s, base + e);
  return cap;
}

}  // namespace cpg
