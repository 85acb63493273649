// SPDX-License-Identifier: Apache-2.0
#include "vitatt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"
#include "vitatt/image_io.hpp"
#include "vitatt/log.hpp"
#include "vitatt/random.hpp"

namespace vitatt {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

const char* kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::kBinary: return "binary";
    case FieldKind::kCategorical: return "categorical";
    case FieldKind::kContinuous: return "continuous";
  }
  return "?";
}

}  // namespace

// ---- schema ----

std::size_t FieldSpec::width() const {
  switch (kind) {
    case FieldKind::kBinary: return 2;
    case FieldKind::kCategorical: return levels.size();
    case FieldKind::kContinuous: return 1;
  }
  return 0;
}

std::size_t MetadataSchema::slot_width() const {
  std::size_t w = 0;
  for (const auto& f : fields) w = std::max(w, f.width());
  return w;
}

std::size_t MetadataSchema::field_index(std::string_view name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name) return i;
  throw DataError("unknown metadata field '" + std::string(name) + "'");
}

std::size_t MetadataSchema::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return i;
  throw DataError("unknown class '" + std::string(name) + "'");
}

void MetadataSchema::validate() const {
  if (classes.size() < 2) throw DataError("schema needs at least 2 classes");
  std::set<std::string> seen_classes(classes.begin(), classes.end());
  if (seen_classes.size() != classes.size()) throw DataError("duplicate class names in schema");
  std::set<std::string> names;
  for (const auto& f : fields) {
    if (f.name.empty()) throw DataError("schema field with empty name");
    if (!names.insert(f.name).second) throw DataError("duplicate field '" + f.name + "'");
    if (f.kind == FieldKind::kCategorical) {
      if (f.levels.empty()) throw DataError("field '" + f.name + "' has no levels");
      std::set<std::string> lv(f.levels.begin(), f.levels.end());
      if (lv.size() != f.levels.size()) throw DataError("field '" + f.name + "' repeats a level");
    }
    if (f.kind == FieldKind::kContinuous && !(f.min < f.max)) {
      throw DataError("field '" + f.name + "' needs min < max");
    }
  }
}

MetadataSchema MetadataSchema::subset(std::span<const std::size_t> idx) const {
  MetadataSchema out = *this;
  out.fields.clear();
  for (std::size_t i : idx) {
    if (i >= fields.size()) throw std::out_of_range("field index out of range");
    out.fields.push_back(fields[i]);
  }
  return out;
}

nlohmann::json MetadataSchema::to_json() const {
  nlohmann::json fs = nlohmann::json::array();
  for (const auto& f : fields) {
    nlohmann::json j{{"name", f.name}, {"kind", kind_name(f.kind)}};
    if (f.kind == FieldKind::kCategorical) j["levels"] = f.levels;
    if (f.kind == FieldKind::kContinuous) {
      j["min"] = f.min;
      j["max"] = f.max;
    }
    fs.push_back(std::move(j));
  }
  return {{"id_column", id_column}, {"label_column", label_column}, {"classes", classes},
          {"fields", fs}};
}

MetadataSchema MetadataSchema::from_json(const nlohmann::json& j) {
  MetadataSchema s;
  try {
    s.id_column = j.value("id_column", s.id_column);
    s.label_column = j.value("label_column", s.label_column);
    s.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& jf : j.at("fields")) {
      FieldSpec f;
      f.name = jf.at("name").get<std::string>();
      const std::string kind = jf.at("kind").get<std::string>();
      if (kind == "binary") {
        f.kind = FieldKind::kBinary;
      } else if (kind == "categorical") {
        f.kind = FieldKind::kCategorical;
        f.levels = jf.at("levels").get<std::vector<std::string>>();
      } else if (kind == "continuous") {
        f.kind = FieldKind::kContinuous;
        f.min = jf.at("min").get<double>();
        f.max = jf.at("max").get<double>();
      } else {
        throw DataError("field '" + f.name + "': unknown kind '" + kind + "'");
      }
      s.fields.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid schema: ") + e.what());
  }
  s.validate();
  return s;
}

MetadataSchema MetadataSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> out(schema.num_classes(), 0);
  for (const auto& s : samples) ++out.at(s.label);
  return out;
}

// ---- loading ----

bool is_missing_value(std::string_view cell) {
  const std::string c = lower(trim(cell));
  return c.empty() || c == "na" || c == "nan" || c == "null" || c == "unk";
}

double parse_field_value(const FieldSpec& field, std::string_view cell) {
  const std::string_view t = trim(cell);
  switch (field.kind) {
    case FieldKind::kBinary: {
      const std::string c = lower(t);
      if (c == "true" || c == "1" || c == "yes" || c == "t" || c == "y") return 1.0;
      if (c == "false" || c == "0" || c == "no" || c == "f" || c == "n") return 0.0;
      throw DataError("field '" + field.name + "': '" + std::string(t) + "' is not a binary value");
    }
    case FieldKind::kCategorical:
      for (std::size_t i = 0; i < field.levels.size(); ++i)
        if (field.levels[i] == t) return static_cast<double>(i);
      throw DataError("field '" + field.name + "': unknown level '" + std::string(t) + "'");
    case FieldKind::kContinuous: {
      double v = 0.0;
      const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
      if (r.ec != std::errc() || r.ptr != t.data() + t.size() || !std::isfinite(v)) {
        throw DataError("field '" + field.name + "': '" + std::string(t) + "' is not a number");
      }
      return v;
    }
  }
  return 0.0;
}

std::string format_field_value(const FieldSpec& field, double value) {
  switch (field.kind) {
    case FieldKind::kBinary: return value != 0.0 ? "True" : "False";
    case FieldKind::kCategorical: return field.levels.at(static_cast<std::size_t>(value));
    case FieldKind::kContinuous: return format_double(value);
  }
  return {};
}

Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                     const MetadataSchema& schema, std::size_t image_size, std::size_t channels) {
  schema.validate();
  const CsvTable table = read_csv(csv_path);
  const std::string where = csv_path.string();
  auto column = [&](const std::string& name) {
    const std::size_t c = table.column(name);
    if (c == std::string::npos) throw DataError(where + ": missing column '" + name + "'");
    return c;
  };
  const std::size_t id_col = column(schema.id_column);
  const std::size_t label_col = column(schema.label_column);
  std::vector<std::size_t> field_cols;
  for (const auto& f : schema.fields) field_cols.push_back(column(f.name));

  Dataset ds;
  ds.schema = schema;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string at = where + " line " + std::to_string(table.row_lines[r]);
    if (row.size() != table.header.size()) {
      throw DataError(at + ": malformed row, expected " + std::to_string(table.header.size()) +
                      " fields, got " + std::to_string(row.size()));
    }
    bool missing = is_missing_value(row[id_col]) || is_missing_value(row[label_col]);
    for (std::size_t c : field_cols) missing = missing || is_missing_value(row[c]);
    if (missing) {
      ++ds.dropped_rows;
      continue;
    }
    Sample s;
    s.id = std::string(trim(row[id_col]));
    try {
      s.label = schema.class_index(trim(row[label_col]));
      for (std::size_t i = 0; i < schema.fields.size(); ++i)
        s.metadata.push_back(parse_field_value(schema.fields[i], row[field_cols[i]]));
    } catch (const DataError& e) {
      throw DataError(at + ": " + e.what());
    }
    std::filesystem::path img = image_dir / s.id;
    if (!std::filesystem::exists(img)) {
      std::filesystem::path alt = image_dir / std::filesystem::path(s.id).stem();
      alt += ".ppm";
      if (!std::filesystem::exists(alt)) throw DataError(at + ": missing image " + img.string());
      img = alt;
    }
    const Image square = center_crop_square(read_pnm(img));
    s.image = image_to_tensor(resize_bilinear(square, image_size, image_size), channels);
    ds.samples.push_back(std::move(s));
  }
  if (ds.dropped_rows > 0) {
    warn(where + ": dropped " + std::to_string(ds.dropped_rows) +
         " row(s) with undefined values, kept " + std::to_string(ds.samples.size()));
  }
  return ds;
}

// ---- encoding ----

Tensor encode_metadata(const Sample& sample, const MetadataSchema& schema) {
  const std::size_t m = schema.fields.size(), w = schema.slot_width();
  if (sample.metadata.size() != m) {
    throw DimensionError("sample '" + sample.id + "' has " + std::to_string(sample.metadata.size()) +
                         " metadata values, schema has " + std::to_string(m) + " fields");
  }
  std::vector<double> out(m * w, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const FieldSpec& f = schema.fields[i];
    const double v = sample.metadata[i];
    double* slot = out.data() + i * w;
    switch (f.kind) {
      case FieldKind::kBinary:
        slot[v != 0.0 ? 0 : 1] = 1.0;
        break;
      case FieldKind::kCategorical: {
        const auto level = static_cast<std::size_t>(v);
        if (v < 0 || level >= f.levels.size() || static_cast<double>(level) != v) {
          throw DataError("sample '" + sample.id + "': invalid level index for '" + f.name + "'");
        }
        slot[level] = 1.0;
        break;
      }
      case FieldKind::kContinuous: {
        double u = (v - f.min) / (f.max - f.min);
        if (u < 0.0 || u > 1.0) {
          warn("sample '" + sample.id + "': " + f.name + "=" + format_double(v) +
               " outside [" + format_double(f.min) + ", " + format_double(f.max) + "], clamped");
          u = std::clamp(u, 0.0, 1.0);
        }
        slot[0] = u;
        break;
      }
    }
  }
  return Tensor({m, w}, std::move(out));
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const MetadataSchema& schema) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no samples");
  const Shape ishape = samples[indices[0]].image.shape();
  const std::size_t img_n = shape_numel(ishape);
  const std::size_t m = schema.fields.size(), w = schema.slot_width();
  std::vector<double> images, meta;
  images.reserve(indices.size() * img_n);
  meta.reserve(indices.size() * m * w);
  for (std::size_t i : indices) {
    const Sample& s = samples[i];
    if (s.image.shape() != ishape) throw DimensionError("make_batch: image shapes differ");
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    const Tensor e = encode_metadata(s, schema);
    meta.insert(meta.end(), e.data().begin(), e.data().end());
  }
  Shape bshape{indices.size()};
  bshape.insert(bshape.end(), ishape.begin(), ishape.end());
  return Batch{Tensor(std::move(bshape), std::move(images)), Tensor({indices.size(), m, w}, std::move(meta))};
}

Dataset select_fields(const Dataset& dataset, std::span<const std::size_t> fields) {
  Dataset out;
  out.schema = dataset.schema.subset(fields);
  out.dropped_rows = dataset.dropped_rows;
  out.samples.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    Sample t{s.id, s.image, {}, s.label};
    for (std::size_t f : fields) t.metadata.push_back(s.metadata.at(f));
    out.samples.push_back(std::move(t));
  }
  return out;
}

// ---- splits ----

SplitIndices stratified_split(std::span<const std::size_t> labels, std::array<double, 3> ratios,
                              std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::size_t classes = 0;
  for (std::size_t y : labels) classes = std::max(classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> dest{&out.train, &out.val, &out.test};
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    rng.shuffle(idx.begin(), idx.end());
    const std::size_t n = idx.size();

    std::array<std::size_t, 3> count{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double exact = static_cast<double>(n) * ratios[k];
      count[k] = static_cast<std::size_t>(std::floor(exact));
      frac[k] = exact - static_cast<double>(count[k]);
      assigned += count[k];
    }
    // largest remainder, earlier split on ties
    while (assigned < n) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < 3; ++k)
        if (frac[k] > frac[best]) best = k;
      ++count[best];
      frac[best] = -1.0;
      ++assigned;
    }
    while (assigned > n) {  // floor() cannot overshoot, but guard rounding in exact
      const auto k = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      --count[k];
      --assigned;
    }
    const std::size_t wanted = static_cast<std::size_t>(std::count_if(
        ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));
    if (n < wanted) {
      warn("class " + std::to_string(c) + " has " + std::to_string(n) +
           " sample(s), fewer than the " + std::to_string(wanted) + " splits");
    } else {
      for (std::size_t k = 0; k < 3; ++k) {
        if (ratios[k] > 0.0 && count[k] == 0) {
          const auto donor = static_cast<std::size_t>(
              std::max_element(count.begin(), count.end()) - count.begin());
          --count[donor];
          ++count[k];
        }
      }
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < count[k]; ++j) dest[k]->push_back(idx[pos++]);
  }
  for (auto* d : dest) std::sort(d->begin(), d->end());
  return out;
}

// ---- correlation ----

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport correlation_ranking(std::span<const Sample> samples, const MetadataSchema& schema) {
  const std::size_t n = samples.size(), classes = schema.num_classes();
  std::vector<std::vector<double>> label_cols(classes, std::vector<double>(n, 0.0));
  std::set<std::size_t> present;
  for (std::size_t i = 0; i < n; ++i) {
    label_cols.at(samples[i].label)[i] = 1.0;
    present.insert(samples[i].label);
  }
  if (present.size() < 2) throw std::invalid_argument("correlation_ranking needs at least 2 classes");

  CorrelationReport report;
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    const FieldSpec& spec = schema.fields[f];
    std::vector<std::vector<double>> cols;
    if (spec.kind == FieldKind::kCategorical) {
      cols.assign(spec.levels.size(), std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i) cols[static_cast<std::size_t>(samples[i].metadata[f])][i] = 1.0;
    } else {
      cols.emplace_back(n);
      for (std::size_t i = 0; i < n; ++i) cols[0][i] = samples[i].metadata[f];
    }
    double best = 0.0;
    for (const auto& col : cols)
      for (const auto& lab : label_cols) best = std::max(best, std::abs(pearson(col, lab)));
    report.names.push_back(spec.name);
    report.coefficients.push_back(best);
  }
  report.ranking.resize(schema.fields.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a, std::size_t b) {
    return report.coefficients[a] > report.coefficients[b];
  });
  return report;
}

nlohmann::json CorrelationReport::to_json() const {
  nlohmann::json fields = nlohmann::json::array();
  for (std::size_t r : ranking) fields.push_back({{"name", names[r]}, {"coefficient", coefficients[r]}});
  return {{"ranking", fields}};
}

std::vector<std::size_t> select_metadata(const CorrelationReport& report, SelectionMode mode,
                                         std::size_t k) {
  const std::size_t m = report.ranking.size();
  if (k > m) {
    throw std::invalid_argument("cannot select " + std::to_string(k) + " of " + std::to_string(m) +
                                " metadata fields");
  }
  if (mode == SelectionMode::kHighest) return {report.ranking.begin(), report.ranking.begin() + k};
  return {report.ranking.rbegin(), report.ranking.rbegin() + k};
}

std::vector<std::size_t> select_metadata(const CorrelationReport& report, std::string_view subset) {
  if (subset == "all") {
    std::vector<std::size_t> all(report.ranking.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (subset.size() > 3 && (subset.substr(0, 3) == "HC-" || subset.substr(0, 3) == "LC-")) {
    std::size_t k = 0;
    const auto digits = subset.substr(3);
    const auto r = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (r.ec == std::errc() && r.ptr == digits.data() + digits.size()) {
      return select_metadata(report, subset[0] == 'H' ? SelectionMode::kHighest : SelectionMode::kLowest, k);
    }
  }
  throw std::invalid_argument("metadata subset must be all, HC-k or LC-k, got '" + std::string(subset) + "'");
}

// ---- writing ----

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                   const std::string& csv_name) {
  const MetadataSchema& schema = dataset.schema;
  std::filesystem::create_directories(dir / "images");
  std::ofstream csv(dir / csv_name, std::ios::binary);
  if (!csv) throw DataError("cannot write " + (dir / csv_name).string());
  std::vector<std::string> header{schema.id_column};
  for (const auto& f : schema.fields) header.push_back(f.name);
  header.push_back(schema.label_column);
  csv << csv_line(header) << '\n';
  for (const auto& s : dataset.samples) {
    std::vector<std::string> row{s.id};
    for (std::size_t i = 0; i < schema.fields.size(); ++i)
      row.push_back(format_field_value(schema.fields[i], s.metadata[i]));
    row.push_back(schema.classes.at(s.label));
    csv << csv_line(row) << '\n';
    write_ppm(dir / "images" / (s.id + ".ppm"), s.image);
  }
  std::ofstream js(dir / "schema.json", std::ios::binary);
  js << schema.to_json().dump(2) << '\n';
  if (!csv || !js) throw DataError("write failed under " + dir.string());
}

}  // namespace vitatt
