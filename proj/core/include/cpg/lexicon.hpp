#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

namespace cpg {

enum class Pos { Noun, Adj, Other };

// Closed-vocabulary lexicon shared by the generator and the noun-phrase
// extractor: every noun names exactly one renderable shape family, every
// adjective carries a render color. Unknown tokens classify as Other.
class Lexicon {
 public:
  static Lexicon default_lexicon();
  static Lexicon from_json_file(const std::string& path);
  void save_json(const std::string& path) const;

  Pos classify(const std::string& token) const;
  bool is_noun(const std::string& token) const { return classify(token) == Pos::Noun; }

  const std::vector<std::string>& nouns() const { return nouns_; }
  const std::vector<std::string>& adjectives() const { return adjs_; }
  const std::string& shape_of(const std::string& noun) const;
  std::array<int, 3> color_of(const std::string& adj) const;
  int noun_index(const std::string& noun) const;  // -1 if absent

  void add_noun(const std::string& token, const std::string& shape);
  void add_adjective(const std::string& token, std::array<int, 3> rgb);

 private:
  std::vector<std::string> nouns_;
  std::vector<std::string> adjs_;
  std::map<std::string, std::string> shape_;
  std::map<std::string, std::array<int, 3>> color_;
};

}  // namespace cpg
