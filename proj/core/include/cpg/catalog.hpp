#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cpg/boxes.hpp"
#include "cpg/lexicon.hpp"

namespace cpg {

struct BrandSpec {
  int brand_id = 0;
  std::string name;
  int homonym_group = 0;      // brands sharing `name` share this id
  std::uint64_t logo_glyph = 0;  // 8x8 bit pattern, unique per brand
  std::set<int> category_set;    // noun indices into the lexicon
};

enum class RegionRole { ProductObject, Logo };

struct GtRegion {
  BoxCxcywh box;  // normalized, fully inside the unit square
  RegionRole role = RegionRole::ProductObject;
  std::string phrase;  // product: "adj* noun" verbatim from title; logo: brand name
};

struct CatalogRecord {
  int record_id = 0;
  int image_size = 0;
  std::vector<std::uint8_t> image;  // HxWx3
  std::vector<std::string> title_tokens;
  std::string brand_name;  // may be empty (missing attribute)
  std::vector<GtRegion> gt_regions;
  std::string country;
  int true_brand_id = -1;  // generator provenance, used for eval labels
};

struct GeneratorConfig {
  int n_brands = 40;
  double homonym_rate = 0.3;
  int n_records = 1000;
  double logo_rate = 0.40;
  int image_size = 64;
  std::uint64_t seed = 0;
  Lexicon lexicon = Lexicon::default_lexicon();
  double brand_in_title_prob = 0.5;
  double brand_attr_missing_prob = 0.0;
  int min_adjs = 0;
  int max_adjs = 2;
  std::string country = "XX";
};

std::vector<BrandSpec> gen_brand_universe(const GeneratorConfig& cfg);

std::vector<std::string> gen_title(const BrandSpec& brand,
                                   const std::vector<int>& categories,
                                   const GeneratorConfig& cfg,
                                   std::mt19937_64& rng);

CatalogRecord render_record(const BrandSpec& brand, const GeneratorConfig& cfg,
                            int record_id);

// Full deterministic generation: same config -> bit-identical catalog.
std::vector<CatalogRecord> generate_catalog(const GeneratorConfig& cfg,
                                            const std::vector<BrandSpec>& brands);

void export_catalog(const std::vector<CatalogRecord>& records,
                    const std::string& path);
std::vector<CatalogRecord> load_catalog(const std::string& path);

void export_brands(const std::vector<BrandSpec>& brands, const std::string& path);
std::vector<BrandSpec> load_brands(const std::string& path);

// Sidecar PNG dump for human inspection.
void dump_record_png(const CatalogRecord& rec, const std::string& path);

}  // namespace cpg
