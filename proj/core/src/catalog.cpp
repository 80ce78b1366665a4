#include "cpg/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cpg/io.hpp"

namespace cpg {

namespace {

const std::vector<std::string> kNameFirst = {
    "Paul", "Nova", "Astra", "Kimo", "Velu", "Orin", "Zane",
    "Mira", "Talo", "Rive", "Juno", "Pax",  "Ondo", "Seri"};
const std::vector<std::string> kNameSecond = {
    "Rich", "Labs", "Works", "North", "Prime", "Field",
    "Gold", "Line", "Craft", "Point", "Sona", "Vale"};

std::uint64_t glyph_pattern(int brand_id, std::uint64_t seed, int salt) {
  // Mirrored 4x8 identicon-style pattern from a hash of the brand id.
  std::mt19937_64 rng = derive_rng(seed ^ 0x6c6f676fULL, std::uint64_t(brand_id) * 131 + salt);
  std::uint32_t bits = static_cast<std::uint32_t>(rng());
  std::uint64_t glyph = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x) {
      if ((bits >> (y * 4 + x)) & 1u) {
        glyph |= 1ull << (y * 8 + x);
        glyph |= 1ull << (y * 8 + (7 - x));
      }
    }
  return glyph;
}

}  // namespace

std::vector<BrandSpec> gen_brand_universe(const GeneratorConfig& cfg) {
  if (cfg.n_brands < 1) throw std::runtime_error("gen_brand_universe: n_brands < 1");
  const int ncat = static_cast<int>(cfg.lexicon.nouns().size());
  if (ncat < 1) throw std::runtime_error("gen_brand_universe: empty lexicon");
  std::mt19937_64 rng = derive_rng(cfg.seed, 0xB7A9Dull);

  int n_homonym = static_cast<int>(std::ceil(cfg.homonym_rate * cfg.n_brands));
  if (n_homonym == 1) n_homonym = 2;  // groups must have size >= 2
  n_homonym = std::min(n_homonym, cfg.n_brands);
  if (n_homonym == 1) n_homonym = 0;

  // group sizes: pairs, with one group of 3 absorbing an odd remainder
  std::vector<int> group_sizes;
  int left = n_homonym;
  while (left >= 2) {
    group_sizes.push_back(2);
    left -= 2;
  }
  if (left == 1 && !group_sizes.empty()) group_sizes.back() = 3;

  // unique names: homonym groups deliberately share one name each
  std::vector<std::string> names;
  for (const auto& a : kNameFirst)
    for (const auto& b : kNameSecond) names.push_back(a + " " + b);
  std::shuffle(names.begin(), names.end(), rng);
  std::size_t name_cursor = 0;
  auto next_name = [&]() {
    std::size_t c = name_cursor++;
    if (c < names.size()) return names[c];
    return names[c % names.size()] + " " + std::to_string(c / names.size());
  };

  std::vector<BrandSpec> brands;
  std::set<std::uint64_t> used_glyphs;
  auto make_brand = [&](const std::string& name, int group) {
    BrandSpec b;
    b.brand_id = static_cast<int>(brands.size());
    b.name = name;
    b.homonym_group = group;
    int salt = 0;
    do {
      b.logo_glyph = glyph_pattern(b.brand_id, cfg.seed, salt++);
    } while (!used_glyphs.insert(b.logo_glyph).second);
    brands.push_back(b);
  };

  int group_id = 0;
  for (int gs : group_sizes) {
    if (gs > ncat)
      throw std::runtime_error(
          "gen_brand_universe: lexicon has " + std::to_string(ncat) +
          " categories, too few for a disjoint homonym group of " +
          std::to_string(gs));
    std::vector<int> cats(ncat);
    for (int i = 0; i < ncat; ++i) cats[i] = i;
    std::shuffle(cats.begin(), cats.end(), rng);
    int per = std::max(1, std::min(2, ncat / gs));
    std::string shared_name = next_name();
    for (int m = 0; m < gs; ++m) {
      make_brand(shared_name, group_id);
      for (int k = 0; k < per; ++k)
        brands.back().category_set.insert(cats[m * per + k]);
    }
    ++group_id;
  }
  while (static_cast<int>(brands.size()) < cfg.n_brands) {
    make_brand(next_name(), group_id++);
    std::uniform_int_distribution<int> n_cats(1, std::min(3, ncat));
    std::uniform_int_distribution<int> pick(0, ncat - 1);
    int want = n_cats(rng);
    while (static_cast<int>(brands.back().category_set.size()) < want)
      brands.back().category_set.insert(pick(rng));
  }
  return brands;
}

std::vector<std::string> gen_title(const BrandSpec& brand,
                                   const std::vector<int>& categories,
                                   const GeneratorConfig& cfg,
                                   std::mt19937_64& rng) {
  if (categories.empty()) throw std::runtime_error("gen_title: empty categories");
  const auto& lx = cfg.lexicon;
  std::vector<std::string> tokens;
  std::bernoulli_distribution with_brand(cfg.brand_in_title_prob);
  if (with_brand(rng)) {
    std::istringstream ss(brand.name);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
  }
  std::uniform_int_distribution<int> n_adjs(cfg.min_adjs, cfg.max_adjs);
  std::uniform_int_distribution<int> pick_adj(
      0, static_cast<int>(lx.adjectives().size()) - 1);
  for (int cat : categories) {
    int k = n_adjs(rng);
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < k) chosen.insert(pick_adj(rng));
    for (int a : chosen) tokens.push_back(lx.adjectives()[a]);
    tokens.push_back(lx.nouns()[cat]);
  }
  return tokens;
}

namespace {

struct PixRect {
  int x0, y0, x1, y1;  // inclusive
  bool overlaps(const PixRect& o, int margin) const {
    return !(x1 + margin < o.x0 || o.x1 + margin < x0 || y1 + margin < o.y0 ||
             o.y1 + margin < y0);
  }
};

bool shape_hit(const std::string& family, double dx, double dy, double r) {
  double ax = std::fabs(dx), ay = std::fabs(dy);
  if (family == "disk") return dx * dx + dy * dy <= r * r;
  if (family == "ring") {
    double d2 = dx * dx + dy * dy;
    return d2 <= r * r && d2 >= r * r * 0.3;
  }
  if (family == "square") return ax <= r && ay <= r;
  if (family == "triangle") return ay <= r && ax <= (dy + r) / 2.0;
  if (family == "bar") return ax <= r && ay <= r / 3.0;
  if (family == "cross") return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
  if (family == "diamond") return ax + ay <= r;
  if (family == "star") return ax + ay <= r && std::min(ax, ay) <= r / 4.0;
  if (family == "hexagon") return ay <= r * 0.9 && ax + 0.5 * ay <= r;
  if (family == "arrow")
    return dx >= 0 ? ax <= r && ay <= r * (1.0 - dx / (r + 1e-9))
                   : ax <= r && ay <= r / 4.0;
  throw std::runtime_error("unknown shape family: " + family);
}

// Paints a shape and returns the exact painted pixel bbox.
PixRect paint_shape(std::vector<std::uint8_t>& img, int size,
                    const std::string& family, int cx, int cy, double r,
                    std::array<int, 3> rgb) {
  PixRect box{size, size, -1, -1};
  int lo = static_cast<int>(std::floor(-r - 1)), hi = static_cast<int>(std::ceil(r + 1));
  for (int dy = lo; dy <= hi; ++dy)
    for (int dx = lo; dx <= hi; ++dx) {
      int x = cx + dx, y = cy + dy;
      if (x < 0 || x >= size || y < 0 || y >= size) continue;
      if (!shape_hit(family, dx, dy, r)) continue;
      std::size_t off = (std::size_t(y) * size + x) * 3;
      img[off] = static_cast<std::uint8_t>(rgb[0]);
      img[off + 1] = static_cast<std::uint8_t>(rgb[1]);
      img[off + 2] = static_cast<std::uint8_t>(rgb[2]);
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  return box;
}

BoxCxcywh normalize_rect(const PixRect& p, int size) {
  double x0 = double(p.x0) / size, y0 = double(p.y0) / size;
  double x1 = double(p.x1 + 1) / size, y1 = double(p.y1 + 1) / size;
  return xyxy_to_cxcywh({x0, y0, x1, y1});
}

}  // namespace

CatalogRecord render_record(const BrandSpec& brand, const GeneratorConfig& cfg,
                            int record_id) {
  if (brand.category_set.empty())
    throw std::runtime_error("render_record: brand has no categories");
  std::mt19937_64 rng = derive_rng(cfg.seed, std::uint64_t(record_id));
  const int S = cfg.image_size;
  const auto& lx = cfg.lexicon;

  CatalogRecord rec;
  rec.record_id = record_id;
  rec.image_size = S;
  rec.country = cfg.country;
  rec.true_brand_id = brand.brand_id;
  std::bernoulli_distribution missing(cfg.brand_attr_missing_prob);
  rec.brand_name = missing(rng) ? std::string() : brand.name;

  // background with light noise
  rec.image.assign(std::size_t(S) * S * 3, 0);
  std::uniform_int_distribution<int> bg_noise(-3, 3);
  for (std::size_t i = 0; i < rec.image.size(); i += 3) {
    int v = 235 + bg_noise(rng);
    rec.image[i] = rec.image[i + 1] = rec.image[i + 2] = static_cast<std::uint8_t>(v);
  }

  // logo placement decided up front so product shapes avoid that corner
  std::bernoulli_distribution has_logo_dist(cfg.logo_rate);
  bool has_logo = has_logo_dist(rng);
  std::uniform_int_distribution<int> corner_dist(0, 3);
  int corner = corner_dist(rng);
  const int margin = 2, tile = 8;
  int lx0 = (corner % 2) ? S - margin - tile : margin;
  int ly0 = (corner / 2) ? S - margin - tile : margin;
  PixRect logo_rect{lx0, ly0, lx0 + tile - 1, ly0 + tile - 1};

  // categories for 1-2 shapes, distinct when the brand allows
  std::uniform_int_distribution<int> n_shapes_dist(1, 2);
  int n_shapes = n_shapes_dist(rng);
  std::vector<int> pool(brand.category_set.begin(), brand.category_set.end());
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<int> categories;
  for (int i = 0; i < n_shapes; ++i)
    categories.push_back(pool[i % pool.size()]);

  rec.title_tokens = gen_title(brand, categories, cfg, rng);

  // recover per-shape phrases from the title (ADJ* NOUN runs, in order)
  struct Phrase {
    std::vector<std::string> adjs;
    std::string noun;
  };
  std::vector<Phrase> phrases;
  {
    Phrase cur;
    for (const auto& tok : rec.title_tokens) {
      Pos p = lx.classify(tok);
      if (p == Pos::Adj) {
        cur.adjs.push_back(tok);
      } else if (p == Pos::Noun) {
        cur.noun = tok;
        phrases.push_back(cur);
        cur = Phrase{};
      } else {
        cur = Phrase{};
      }
    }
  }

  std::vector<PixRect> occupied;
  if (has_logo) occupied.push_back(logo_rect);
  std::uniform_int_distribution<int> size_dist(14, 26);
  for (const auto& ph : phrases) {
    std::array<int, 3> rgb = ph.adjs.empty() ? std::array<int, 3>{95, 95, 100}
                                             : lx.color_of(ph.adjs.front());
    int s = size_dist(rng);
    PixRect placed{0, 0, -1, -1};
    for (int attempt = 0; attempt < 200; ++attempt) {
      if (attempt > 0 && attempt % 40 == 0 && s > 8) s -= 2;
      double r = s / 2.0;
      int pad = static_cast<int>(std::ceil(r)) + 1;
      std::uniform_int_distribution<int> pos(pad, S - 1 - pad);
      int cx = pos(rng), cy = pos(rng);
      PixRect probe{cx - pad, cy - pad, cx + pad, cy + pad};
      bool clash = false;
      for (const auto& o : occupied)
        if (probe.overlaps(o, 1)) clash = true;
      if (clash && attempt < 199) continue;
      placed = paint_shape(rec.image, S, lx.shape_of(ph.noun), cx, cy, r, rgb);
      break;
    }
    if (placed.x1 < 0) continue;  // degenerate, should not happen
    occupied.push_back(placed);
    std::string phrase_str;
    for (const auto& a : ph.adjs) phrase_str += a + " ";
    phrase_str += ph.noun;
    rec.gt_regions.push_back(
        {normalize_rect(placed, S), RegionRole::ProductObject, phrase_str});
  }

  if (has_logo) {
    // white tile, dark glyph bits
    for (int y = 0; y < tile; ++y)
      for (int x = 0; x < tile; ++x) {
        std::size_t off = (std::size_t(ly0 + y) * S + (lx0 + x)) * 3;
        bool bit = (brand.logo_glyph >> (y * 8 + x)) & 1ull;
        rec.image[off] = bit ? 25 : 250;
        rec.image[off + 1] = bit ? 25 : 250;
        rec.image[off + 2] = bit ? 35 : 250;
      }
    rec.gt_regions.push_back({normalize_rect(logo_rect, S), RegionRole::Logo, brand.name});
  }
  return rec;
}

std::vector<CatalogRecord> generate_catalog(const GeneratorConfig& cfg,
                                            const std::vector<BrandSpec>& brands) {
  if (brands.empty()) throw std::runtime_error("generate_catalog: no brands");
  std::vector<CatalogRecord> records;
  records.reserve(cfg.n_records);
  for (int id = 0; id < cfg.n_records; ++id) {
    std::mt19937_64 pick_rng = derive_rng(cfg.seed ^ 0x9b5a11ull, std::uint64_t(id));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(brands.size()) - 1);
    records.push_back(render_record(brands[pick(pick_rng)], cfg, id));
  }
  return records;
}

// ---------------------------------------------------------------------------
// JSONL round trip
// ---------------------------------------------------------------------------

namespace {
nlohmann::json region_to_json(const GtRegion& r) {
  return {{"box", {r.box.cx, r.box.cy, r.box.w, r.box.h}},
          {"role", r.role == RegionRole::Logo ? "logo" : "product"},
          {"phrase", r.phrase}};
}

GtRegion region_from_json(const nlohmann::json& j) {
  GtRegion r;
  r.box = {j.at("box")[0].get<double>(), j.at("box")[1].get<double>(),
           j.at("box")[2].get<double>(), j.at("box")[3].get<double>()};
  std::string role = j.at("role").get<std::string>();
  if (role == "logo")
    r.role = RegionRole::Logo;
  else if (role == "product")
    r.role = RegionRole::ProductObject;
  else
    throw std::runtime_error("bad region role '" + role + "'");
  r.phrase = j.at("phrase").get<std::string>();
  return r;
}
}  // namespace

void export_catalog(const std::vector<CatalogRecord>& records,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_catalog: cannot open " + path);
  for (const auto& rec : records) {
    nlohmann::json j;
    j["record_id"] = rec.record_id;
    j["image_size"] = rec.image_size;
    j["country"] = rec.country;
    j["brand"] = rec.brand_name;
    j["brand_id"] = rec.true_brand_id;
    j["title"] = rec.title_tokens;
    j["image_b64"] = base64_encode(rec.image);
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : rec.gt_regions) regions.push_back(region_to_json(r));
    j["regions"] = regions;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("export_catalog: write failure on " + path);
}

std::vector<CatalogRecord> load_catalog(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_catalog: cannot open " + path);
  std::vector<CatalogRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      CatalogRecord rec;
      rec.record_id = j.at("record_id").get<int>();
      rec.image_size = j.at("image_size").get<int>();
      rec.country = j.at("country").get<std::string>();
      rec.brand_name = j.at("brand").get<std::string>();
      rec.true_brand_id = j.at("brand_id").get<int>();
      rec.title_tokens = j.at("title").get<std::vector<std::string>>();
      rec.image = base64_decode(j.at("image_b64").get<std::string>());
      if (static_cast<int>(rec.image.size()) != rec.image_size * rec.image_size * 3)
        throw std::runtime_error("image payload size mismatch");
      for (const auto& r : j.at("regions")) rec.gt_regions.push_back(region_from_json(r));
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_catalog: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void export_brands(const std::vector<BrandSpec>& brands, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_brands: cannot open " + path);
  for (const auto& b : brands) {
    nlohmann::json j;
    j["brand_id"] = b.brand_id;
    j["name"] = b.name;
    j["homonym_group"] = b.homonym_group;
    j["logo_glyph"] = b.logo_glyph;
    j["categories"] = std::vector<int>(b.category_set.begin(), b.category_set.end());
    out << j.dump() << "\n";
  }
}

std::vector<BrandSpec> load_brands(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_brands: cannot open " + path);
  std::vector<BrandSpec> brands;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      BrandSpec b;
      b.brand_id = j.at("brand_id").get<int>();
      b.name = j.at("name").get<std::string>();
      b.homonym_group = j.at("homonym_group").get<int>();
      b.logo_glyph = j.at("logo_glyph").get<std::uint64_t>();
      for (int c : j.at("categories").get<std::vector<int>>()) b.category_set.insert(c);
      brands.push_back(std::move(b));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_brands: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return brands;
}

void dump_record_png(const CatalogRecord& rec, const std::string& path) {
  write_png(path, rec.image, rec.image_size, rec.image_size);
}

}  // namespace cpg
