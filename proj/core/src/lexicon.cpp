#include "cpg/lexicon.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cpg/io.hpp"

namespace cpg {

Lexicon Lexicon::default_lexicon() {
  Lexicon lx;
  lx.add_noun("watch", "ring");
  lx.add_noun("plate", "disk");
  lx.add_noun("wallet", "square");
  lx.add_noun("tent", "triangle");
  lx.add_noun("knife", "bar");
  lx.add_noun("badge", "cross");
  lx.add_noun("gem", "diamond");
  lx.add_noun("ornament", "star");
  lx.add_noun("tile", "hexagon");
  lx.add_noun("arrow", "arrow");
  lx.add_adjective("red", {200, 45, 45});
  lx.add_adjective("blue", {45, 70, 205});
  lx.add_adjective("green", {40, 160, 70});
  lx.add_adjective("golden", {215, 165, 35});
  lx.add_adjective("violet", {140, 60, 190});
  lx.add_adjective("teal", {0, 150, 150});
  lx.add_adjective("dark", {60, 60, 70});
  lx.add_adjective("pink", {230, 105, 180});
  return lx;
}

void Lexicon::add_noun(const std::string& token, const std::string& shape) {
  nouns_.push_back(token);
  shape_[token] = shape;
}

void Lexicon::add_adjective(const std::string& token, std::array<int, 3> rgb) {
  adjs_.push_back(token);
  color_[token] = rgb;
}

Pos Lexicon::classify(const std::string& token) const {
  if (shape_.count(token)) return Pos::Noun;
  if (color_.count(token)) return Pos::Adj;
  return Pos::Other;
}

const std::string& Lexicon::shape_of(const std::string& noun) const {
  auto it = shape_.find(noun);
  if (it == shape_.end()) throw std::runtime_error("lexicon: unknown noun " + noun);
  return it->second;
}

std::array<int, 3> Lexicon::color_of(const std::string& adj) const {
  auto it = color_.find(adj);
  if (it == color_.end()) throw std::runtime_error("lexicon: unknown adjective " + adj);
  return it->second;
}

int Lexicon::noun_index(const std::string& noun) const {
  for (std::size_t i = 0; i < nouns_.size(); ++i)
    if (nouns_[i] == noun) return static_cast<int>(i);
  return -1;
}

Lexicon Lexicon::from_json_file(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  Lexicon lx;
  for (auto& [token, entry] : j.items()) {
    std::string pos = entry.at("pos").get<std::string>();
    if (pos == "NOUN")
      lx.add_noun(token, entry.at("shape").get<std::string>());
    else if (pos == "ADJ")
      lx.add_adjective(token, {entry.at("color")[0].get<int>(),
                               entry.at("color")[1].get<int>(),
                               entry.at("color")[2].get<int>()});
    else if (pos != "OTHER")
      throw std::runtime_error("lexicon: bad pos tag '" + pos + "' for " + token);
  }
  return lx;
}

void Lexicon::save_json(const std::string& path) const {
  nlohmann::json j;
  for (const auto& n : nouns_) j[n] = {{"pos", "NOUN"}, {"shape", shape_.at(n)}};
  for (const auto& a : adjs_) {
    auto c = color_.at(a);
    j[a] = {{"pos", "ADJ"}, {"color", {c[0], c[1], c[2]}}};
  }
  write_text_file(path, j.dump(2));
}

}  // namespace cpg
