// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "vitatt/csv.hpp"
#include "vitatt/data.hpp"
#include "vitatt/error.hpp"
#include "vitatt/image_io.hpp"
#include "vitatt/log.hpp"
#include "vitatt/random.hpp"
#include "vitatt/synthetic.hpp"

using namespace vitatt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vitatt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

MetadataSchema small_schema() {
  MetadataSchema s;
  s.classes = {"BCC", "MEL"};
  s.fields = {{"smoke", FieldKind::kBinary, {}, 0, 1},
              {"fitspatrick", FieldKind::kCategorical, {"1", "2", "3"}, 0, 1},
              {"age", FieldKind::kContinuous, {}, 0, 100}};
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

void write_grey_image(const fs::path& p, std::size_t h, std::size_t w, double v) {
  Image img{3, h, w, std::vector<double>(3 * h * w, v)};
  write_ppm(p, img);
}

// Brute-force Pearson via the covariance definition on explicit sums.
double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  const long double cov = sxy - sx * sy / n, vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
  if (vx <= 1e-18L || vy <= 1e-18L) return 0.0;
  return static_cast<double>(cov / std::sqrt(vx * vy));
}

}  // namespace

TEST_CASE("csv parsing") {
  std::istringstream in("a,b,c\r\n1,\"x, y\",3\n\n4,\"say \"\"hi\"\"\",\"multi\nline\"\n7,8,9");
  const CsvTable t = parse_csv(in);
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][1] == "x, y");
  CHECK(t.rows[1][1] == "say \"hi\"");
  CHECK(t.rows[1][2] == "multi\nline");
  CHECK(t.row_lines == std::vector<std::size_t>{2, 4, 6});
  CHECK(csv_line({"a,b", "q\"", "plain"}) == "\"a,b\",\"q\"\"\",plain");
  std::istringstream bad("a\n\"open");
  CHECK_THROWS_AS(parse_csv(bad), DataError);
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("image io") {
  const fs::path dir = scratch_dir("image_io");
  Rng rng(1);
  Image img{3, 5, 7, {}};
  for (std::size_t i = 0; i < 105; ++i) img.pixels.push_back(static_cast<double>(rng.below(256)) / 255.0);
  write_ppm(dir / "a.ppm", img);
  const Image back = read_pnm(dir / "a.ppm");
  CHECK(back.channels == 3);
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.pixels == img.pixels);

  write_text(dir / "g.pgm", "P2\n# comment\n2 2\n4\n0 1\n2 4\n");
  const Image grey = read_pnm(dir / "g.pgm");
  CHECK(grey.channels == 1);
  CHECK(grey.pixels == std::vector<double>{0.0, 0.25, 0.5, 1.0});
  CHECK(image_to_tensor(grey, 3).shape() == Shape{3, 2, 2});

  write_text(dir / "bad.ppm", "GIF89a");
  CHECK_THROWS_AS(read_pnm(dir / "bad.ppm"), DataError);
  CHECK_THROWS_AS(read_pnm(dir / "none.ppm"), DataError);

  SUBCASE("crop and resize") {
    Image wide{1, 2, 4, {0, 1, 2, 3, 4, 5, 6, 7}};
    const Image sq = center_crop_square(wide);
    CHECK(sq.pixels == std::vector<double>{1, 2, 5, 6});
    // constant image stays constant; 2x upscaling of a ramp interpolates
    Image ramp{1, 1, 2, {0.0, 1.0}};
    const Image up = resize_bilinear(ramp, 1, 4);
    CHECK(up.pixels == std::vector<double>{0.0, 0.25, 0.75, 1.0});
    Image flat{1, 3, 3, std::vector<double>(9, 0.4)};
    for (double v : resize_bilinear(flat, 5, 5).pixels) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
  }
}

TEST_CASE("schema json round trip and validation") {
  const MetadataSchema s = small_schema();
  CHECK(MetadataSchema::from_json(s.to_json()) == s);
  CHECK(s.slot_width() == 3);
  nlohmann::json j = s.to_json();
  j["fields"][1]["levels"] = nlohmann::json::array();
  CHECK_THROWS_AS(MetadataSchema::from_json(j), DataError);
  j = s.to_json();
  j["fields"][2]["min"] = 100;
  CHECK_THROWS_AS(MetadataSchema::from_json(j), DataError);
  j = s.to_json();
  j["fields"][1]["name"] = "smoke";
  CHECK_THROWS_AS(MetadataSchema::from_json(j), DataError);
}

TEST_CASE("load_dataset") {
  const fs::path dir = scratch_dir("load");
  fs::create_directories(dir / "img");
  for (const char* id : {"a", "b", "c", "d"}) write_grey_image(dir / "img" / (std::string(id) + ".ppm"), 6, 10, 0.5);
  const MetadataSchema schema = small_schema();

  SUBCASE("rows with an undefined field are dropped and counted") {
    write_text(dir / "m.csv",
               "img_id,smoke,fitspatrick,age,diagnostic\n"
               "a.png,True,1,40,BCC\n"
               "b.png,False,,55,MEL\n"
               "c.png,False,3,61.5,MEL\n"
               "d.png,True,2,30,BCC\n");
    std::vector<std::string> warnings;
    ScopedWarningHandler h([&](const std::string& m) { warnings.push_back(m); });
    const Dataset ds = load_dataset(dir / "m.csv", dir / "img", schema, 4);
    CHECK(ds.samples.size() == 3);
    CHECK(ds.dropped_rows == 1);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("dropped 1") != std::string::npos);
    CHECK(ds.samples[1].id == "c.png");
    CHECK(ds.samples[1].metadata == std::vector<double>{0.0, 2.0, 61.5});
    CHECK(ds.samples[1].label == 1);
    CHECK(ds.samples[0].image.shape() == Shape{3, 4, 4});
    for (double v : ds.samples[0].image.data()) CHECK(std::abs(v - 128.0 / 255.0) < 1e-12);
  }
  SUBCASE("malformed row reports its line") {
    write_text(dir / "m.csv",
               "img_id,smoke,fitspatrick,age,diagnostic\na,True,1,40,BCC\nb,True,1,40\n");
    try {
      load_dataset(dir / "m.csv", dir / "img", schema, 4);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("unknown categorical level") {
    write_text(dir / "m.csv", "img_id,smoke,fitspatrick,age,diagnostic\na,True,7,40,BCC\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "m.csv", dir / "img", schema, 4),
                         doctest::Contains("unknown level"), DataError);
  }
  SUBCASE("unknown class, missing column, missing image, missing csv") {
    write_text(dir / "m.csv", "img_id,smoke,fitspatrick,age,diagnostic\na,True,1,40,XYZ\n");
    CHECK_THROWS_AS(load_dataset(dir / "m.csv", dir / "img", schema, 4), DataError);
    write_text(dir / "m.csv", "img_id,smoke,age,diagnostic\na,True,40,BCC\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "m.csv", dir / "img", schema, 4),
                         doctest::Contains("fitspatrick"), DataError);
    write_text(dir / "m.csv", "img_id,smoke,fitspatrick,age,diagnostic\nzz,True,1,40,BCC\n");
    CHECK_THROWS_AS(load_dataset(dir / "m.csv", dir / "img", schema, 4), DataError);
    CHECK_THROWS_AS(load_dataset(dir / "nope.csv", dir / "img", schema, 4), DataError);
  }
}

TEST_CASE("encode_metadata") {
  const MetadataSchema schema = small_schema();
  Sample s{"x", Tensor(), {1.0, 1.0, 0.0}, 0};
  Tensor e = encode_metadata(s, schema);
  CHECK(e.shape() == Shape{3, 3});
  CHECK(std::vector<double>(e.data().begin(), e.data().end()) ==
        std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 0});
  s.metadata = {0.0, 2.0, 100.0};
  e = encode_metadata(s, schema);
  CHECK(std::vector<double>(e.data().begin(), e.data().end()) ==
        std::vector<double>{0, 1, 0, 0, 0, 1, 1, 0, 0});
  s.metadata = {0.0, 0.0, 25.0};
  CHECK(encode_metadata(s, schema).at(6) == 0.25);

  std::vector<std::string> warnings;
  ScopedWarningHandler h([&](const std::string& m) { warnings.push_back(m); });
  s.metadata = {0.0, 0.0, 130.0};
  CHECK(encode_metadata(s, schema).at(6) == 1.0);
  s.metadata = {0.0, 0.0, -5.0};
  CHECK(encode_metadata(s, schema).at(6) == 0.0);
  CHECK(warnings.size() == 2);
}

TEST_CASE("stratified_split") {
  SUBCASE("single class 50/15/35") {
    std::vector<std::size_t> labels(100, 0);
    const auto s = stratified_split(labels, {0.5, 0.15, 0.35}, 3);
    CHECK(s.train.size() == 50);
    CHECK(s.val.size() == 15);
    CHECK(s.test.size() == 35);
  }
  SUBCASE("two classes 60+40 at 50/25/25 allocate per class") {
    std::vector<std::size_t> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 5 < 3 ? 0 : 1);
    const auto s = stratified_split(labels, {0.5, 0.25, 0.25}, 4);
    auto count = [&](const std::vector<std::size_t>& idx, std::size_t c) {
      return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == c; });
    };
    CHECK(count(s.train, 0) == 30);
    CHECK(count(s.val, 0) == 15);
    CHECK(count(s.test, 0) == 15);
    CHECK(count(s.train, 1) == 20);
    CHECK(count(s.val, 1) == 10);
    CHECK(count(s.test, 1) == 10);
    // partition property
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(100);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
  }
  SUBCASE("deterministic in the seed") {
    std::vector<std::size_t> labels;
    Rng rng(5);
    for (int i = 0; i < 80; ++i) labels.push_back(rng.below(3));
    const auto a = stratified_split(labels, {0.6, 0.2, 0.2}, 9);
    const auto b = stratified_split(labels, {0.6, 0.2, 0.2}, 9);
    const auto c = stratified_split(labels, {0.6, 0.2, 0.2}, 10);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    CHECK(a.train != c.train);
  }
  SUBCASE("small classes still reach every split, tiny ones warn") {
    std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2};
    std::vector<std::string> warnings;
    ScopedWarningHandler h([&](const std::string& m) { warnings.push_back(m); });
    const auto s = stratified_split(labels, {0.8, 0.1, 0.1}, 1);
    for (const auto* split : {&s.train, &s.val, &s.test})
      CHECK(std::any_of(split->begin(), split->end(), [&](std::size_t i) { return labels[i] == 0; }));
    CHECK(warnings.size() == 1);
    CHECK(s.train.size() + s.val.size() + s.test.size() == labels.size());
  }
  CHECK_THROWS_AS(stratified_split(std::vector<std::size_t>{0, 1}, {0.5, 0.5, 0.5}, 1),
                  std::invalid_argument);
}

TEST_CASE("correlation_ranking and select_metadata") {
  MetadataSchema schema = small_schema();
  schema.fields.push_back({"const", FieldKind::kContinuous, {}, 0, 10});
  std::vector<Sample> samples;
  Rng rng(3);
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t y = i % 2;
    // smoke == class indicator; fitspatrick partly related; age random
    samples.push_back({"s", Tensor(), {static_cast<double>(y), static_cast<double>(y == 1 ? rng.below(2) : 2),
                                        rng.uniform(0, 100), 5.0}, y});
  }
  const CorrelationReport r = correlation_ranking(samples, schema);
  CHECK(r.coefficients[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.coefficients[3] == 0.0);
  CHECK(r.ranking[0] == 0);
  CHECK(r.ranking[1] == 1);
  CHECK(r.ranking.back() == 3);
  for (double c : r.coefficients) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }

  SUBCASE("invariant to sample order") {
    std::vector<Sample> rev(samples.rbegin(), samples.rend());
    const CorrelationReport q = correlation_ranking(rev, schema);
    CHECK(q.ranking == r.ranking);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q.coefficients[i] - r.coefficients[i]) < 1e-12);
  }
  SUBCASE("selection") {
    CHECK(select_metadata(r, SelectionMode::kHighest, 1) == std::vector<std::size_t>{0});
    auto all = select_metadata(r, SelectionMode::kHighest, 4);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3});
    for (std::size_t k = 0; k <= 4; ++k) {
      auto hc = select_metadata(r, SelectionMode::kHighest, k);
      const auto lc = select_metadata(r, SelectionMode::kLowest, 4 - k);
      hc.insert(hc.end(), lc.begin(), lc.end());
      std::sort(hc.begin(), hc.end());
      CHECK(hc == std::vector<std::size_t>{0, 1, 2, 3});
    }
    CHECK(select_metadata(r, "LC-1") == std::vector<std::size_t>{3});
    CHECK(select_metadata(r, "all").size() == 4);
    CHECK_THROWS_AS(select_metadata(r, "HC-5"), std::invalid_argument);
    CHECK_THROWS_AS(select_metadata(r, "XX-1"), std::invalid_argument);
  }
  SUBCASE("ties keep schema order") {
    CorrelationReport t;
    t.names = {"a", "b", "c"};
    t.coefficients = {0.5, 0.5, 0.9};
    t.ranking = {2, 0, 1};
    CHECK(select_metadata(t, SelectionMode::kHighest, 2) == std::vector<std::size_t>{2, 0});
  }
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.samples_per_class = {60, 60, 60, 60};
  spec.informative_fields = 5;
  spec.noise_fields = 5;
  spec.fusion_necessity = true;
  spec.seed = 17;
  const SyntheticDataset a = generate_synthetic(spec), b = generate_synthetic(spec);

  SUBCASE("deterministic in the seed") {
    REQUIRE(a.dataset.samples.size() == b.dataset.samples.size());
    for (std::size_t i = 0; i < a.dataset.samples.size(); ++i) {
      const auto &x = a.dataset.samples[i], &y = b.dataset.samples[i];
      CHECK(x.metadata == y.metadata);
      CHECK(std::equal(x.image.data().begin(), x.image.data().end(), y.image.data().begin()));
    }
    CHECK(a.manifest == b.manifest);
    CHECK(a.dataset.schema == b.dataset.schema);
  }
  SUBCASE("manifest lists the planted fields") {
    CHECK(a.informative.size() == 5);
    CHECK(a.noise.size() == 5);
    CHECK(a.manifest["informative_fields"].get<std::vector<std::string>>() == a.informative);
  }
  SUBCASE("image-only Bayes rule cannot separate paired classes") {
    // The generator draws the same image distribution for classes y and
    // y + G. Decode the group from pixels by brute force over the boxes,
    // then predict the most frequent class with that group.
    const std::size_t groups = spec.num_groups();
    const auto counts = a.dataset.class_counts();
    std::size_t correct = 0;
    for (const auto& s : a.dataset.samples) {
      std::size_t best_g = 0;
      double best_dev = -1.0;
      for (std::size_t g = 0; g < groups; ++g) {
        const BlobBox box = blob_box(g, groups, spec.image_size);
        double dev = 0.0;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = box.y0; y < box.y1; ++y)
            for (std::size_t x = box.x0; x < box.x1; ++x)
              dev += std::abs(s.image.at((c * 32 + y) * 32 + x) - 0.35);
        if (dev > best_dev) {
          best_dev = dev;
          best_g = g;
        }
      }
      CHECK(best_g == spec.group_of(s.label));
      std::size_t pred = best_g;
      for (std::size_t y = 0; y < spec.num_classes; ++y)
        if (spec.group_of(y) == best_g && counts[y] > counts[pred]) pred = y;
      correct += pred == s.label;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(a.dataset.samples.size());
    CHECK(acc <= 1.0 / (4.0 / 2.0) + 0.02);
  }
  SUBCASE("noise fields are independent of the label") {
    SyntheticSpec big = spec;
    big.samples_per_class = {125, 125, 125, 125};
    const SyntheticDataset d = generate_synthetic(big);
    const auto& schema = d.dataset.schema;
    std::vector<double> label_index;
    for (const auto& s : d.dataset.samples) label_index.push_back(static_cast<double>(s.label));
    // One coefficient per field against the label, plus an aggregate over
    // every (level indicator, class indicator) pair: under independence
    // n·r² averages 1.
    double sum_nr2 = 0.0;
    std::size_t pairs = 0;
    for (const auto& name : d.noise) {
      const std::size_t f = schema.field_index(name);
      const FieldSpec& fs = schema.fields[f];
      std::vector<double> raw;
      for (const auto& s : d.dataset.samples) raw.push_back(s.metadata[f]);
      CAPTURE(name);
      CHECK(std::abs(brute_pearson(raw, label_index)) < 0.1);
      const std::size_t cols = fs.kind == FieldKind::kCategorical ? fs.levels.size() : 1;
      for (std::size_t l = 0; l < cols; ++l)
        for (std::size_t c = 0; c < 4; ++c) {
          std::vector<double> x, y;
          for (const auto& s : d.dataset.samples) {
            x.push_back(fs.kind == FieldKind::kCategorical ? (s.metadata[f] == static_cast<double>(l) ? 1.0 : 0.0)
                                                           : s.metadata[f]);
            y.push_back(s.label == c ? 1.0 : 0.0);
          }
          const double r = brute_pearson(x, y);
          sum_nr2 += 500.0 * r * r;
          ++pairs;
        }
    }
    const double mean_nr2 = sum_nr2 / static_cast<double>(pairs);
    CHECK(mean_nr2 > 0.4);
    CHECK(mean_nr2 < 1.8);
  }
  SUBCASE("HC-5 recovers the planted fields, checked against brute-force Pearson") {
    const CorrelationReport r = correlation_ranking(a.dataset.samples, a.dataset.schema);
    const auto& schema = a.dataset.schema;
    for (std::size_t f = 0; f < schema.num_fields(); ++f) {
      const FieldSpec& fs = schema.fields[f];
      const std::size_t cols = fs.kind == FieldKind::kCategorical ? fs.levels.size() : 1;
      double best = 0.0;
      for (std::size_t l = 0; l < cols; ++l)
        for (std::size_t c = 0; c < 4; ++c) {
          std::vector<double> x, y;
          for (const auto& s : a.dataset.samples) {
            x.push_back(fs.kind == FieldKind::kCategorical ? (s.metadata[f] == static_cast<double>(l) ? 1.0 : 0.0)
                                                           : s.metadata[f]);
            y.push_back(s.label == c ? 1.0 : 0.0);
          }
          best = std::max(best, std::abs(brute_pearson(x, y)));
        }
      CHECK(std::abs(r.coefficients[f] - best) < 1e-9);
    }
    std::set<std::string> hc;
    for (std::size_t f : select_metadata(r, SelectionMode::kHighest, 5)) hc.insert(schema.fields[f].name);
    CHECK(hc == std::set<std::string>(a.informative.begin(), a.informative.end()));
  }
  SUBCASE("disk round trip") {
    const fs::path dir = scratch_dir("synth");
    write_synthetic(a, dir);
    CHECK(fs::exists(dir / "manifest.json"));
    const MetadataSchema schema = MetadataSchema::load(dir / "schema.json");
    CHECK(schema == a.dataset.schema);
    const Dataset back = load_dataset(dir / "metadata.csv", dir / "images", schema, 32);
    REQUIRE(back.samples.size() == a.dataset.samples.size());
    CHECK(back.dropped_rows == 0);
    double worst = 0.0;
    for (std::size_t i = 0; i < back.samples.size(); ++i) {
      CHECK(back.samples[i].id == a.dataset.samples[i].id);
      CHECK(back.samples[i].label == a.dataset.samples[i].label);
      CHECK(back.samples[i].metadata == a.dataset.samples[i].metadata);
      for (std::size_t j = 0; j < back.samples[i].image.numel(); ++j)
        worst = std::max(worst, std::abs(back.samples[i].image.at(j) - a.dataset.samples[i].image.at(j)));
    }
    CHECK(worst <= 0.5 / 255.0);
  }
  SUBCASE("batches and field subsets") {
    const std::vector<std::size_t> idx{0, 5, 9};
    const Batch batch = make_batch(a.dataset.samples, idx, a.dataset.schema);
    CHECK(batch.images.shape() == Shape{3, 3, 32, 32});
    CHECK(batch.metadata.shape() == Shape{3, 10, a.dataset.schema.slot_width()});
    const std::vector<std::size_t> keep{0, 1};
    const Dataset sub = select_fields(a.dataset, keep);
    CHECK(sub.schema.num_fields() == 2);
    CHECK(sub.samples[0].metadata.size() == 2);
    CHECK(sub.schema.slot_width() == std::max(a.dataset.schema.fields[0].width(), a.dataset.schema.fields[1].width()));
  }
}
