#include "ensx/dataio/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "ensx/core/binary_io.hpp"
#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"

namespace ensx::dataio {

namespace {

struct Field {
  std::string text;
  bool quoted = false;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// RFC-4180 records; quoted fields may span lines and contain "" escapes.
std::vector<std::vector<Field>> read_records(const std::string& text) {
  std::vector<std::vector<Field>> records;
  std::vector<Field> record;
  std::string cur;
  bool in_quotes = false;
  bool quoted = false;
  bool any = false;

  auto end_field = [&] {
    record.push_back({quoted ? cur : trim(cur), quoted});
    cur.clear();
    quoted = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].text.empty() && !record[0].quoted;
    if (!blank) records.push_back(std::move(record));
    record.clear();
    any = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur.push_back(c);
      }
      continue;
    }
    any = true;
    if (c == '"') {
      // Opening quote only counts at field start (after optional blanks).
      if (trim(cur).empty()) {
        cur.clear();
        in_quotes = true;
        quoted = true;
      } else {
        cur.push_back(c);
      }
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      cur.push_back(c);
    }
  }
  if (in_quotes) throw Error(ErrorCode::Parse, "unterminated quoted field");
  if (any || !cur.empty() || !record.empty()) end_record();
  return records;
}

bool is_missing(const Field& f) { return f.text.empty() || f.text == "?"; }

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

void recompute_ranges(Dataset& ds, const std::vector<std::size_t>& rows) {
  for (std::size_t a = 0; a < ds.attributes.size(); ++a) {
    auto& attr = ds.attributes[a];
    if (!attr.is_numeric() || rows.empty()) continue;
    attr.min = attr.max = ds.value(rows.front(), a);
    for (std::size_t r : rows) {
      attr.min = std::min(attr.min, ds.value(r, a));
      attr.max = std::max(attr.max, ds.value(r, a));
    }
  }
}

}  // namespace

std::optional<int> Attribute::category_index(const std::string& value) const {
  const auto it = std::find(categories.begin(), categories.end(), value);
  if (it == categories.end()) return std::nullopt;
  return static_cast<int>(it - categories.begin());
}

std::vector<std::size_t> Dataset::train_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == Split::Train) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::test_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == Split::Test) out.push_back(i);
  }
  return out;
}

std::optional<std::size_t> Dataset::attribute_index(const std::string& name) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == name) return i;
  }
  return std::nullopt;
}

std::string Dataset::fingerprint() const {
  ByteWriter w;
  w.put_string(label_name);
  for (const auto& c : classes) w.put_string(c);
  for (const auto& a : attributes) {
    w.put_string(a.name);
    w.put(static_cast<std::uint8_t>(a.kind));
    for (const auto& c : a.categories) w.put_string(c);
  }
  w.put_vector(values);
  w.put_vector(labels);
  for (Split s : split) w.put(static_cast<std::uint8_t>(s));
  w.put_vector(folds);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(w.bytes())));
  return hex;
}

std::vector<std::string> split_csv_record(const std::string& line) {
  auto records = read_records(line);
  std::vector<std::string> out;
  if (records.empty()) return out;
  for (auto& f : records.front()) out.push_back(std::move(f.text));
  return out;
}

Dataset load_csv(const std::string& path, const std::string& label_column, const SchemaHints& hints) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw Error(ErrorCode::Io, "missing or unreadable data file: " + path);
  }
  return parse_csv(text, label_column, hints);
}

Dataset parse_csv(const std::string& text, const std::string& label_column, const SchemaHints& hints) {
  auto records = read_records(text);
  if (records.empty()) throw Error(ErrorCode::Parse, "no header row");
  std::vector<std::string> header;
  for (auto& f : records.front()) header.push_back(f.text);

  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) throw Error(ErrorCode::NotFound, "label column not found: " + label_column);
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  if (header.size() < 2) throw Error(ErrorCode::Precondition, "no attribute columns besides the label");
  for (const auto& [name, kind] : hints) {
    if (std::find(header.begin(), header.end(), name) == header.end() || name == label_column) {
      throw Error(ErrorCode::NotFound, "schema hint names unknown attribute: " + name);
    }
  }

  Dataset ds;
  ds.label_name = label_column;
  std::vector<std::size_t> attr_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col) attr_cols.push_back(c);
  }

  std::vector<const std::vector<Field>*> kept;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw Error(ErrorCode::Parse, "row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                                        " fields, expected " + std::to_string(header.size()));
    }
    if (std::any_of(rec.begin(), rec.end(), is_missing)) {
      ++ds.dropped_rows;
      continue;
    }
    kept.push_back(&rec);
  }
  if (kept.empty()) throw Error(ErrorCode::Precondition, "no complete rows in data");

  for (std::size_t c : attr_cols) {
    Attribute attr;
    attr.name = header[c];
    bool all_numeric = true;
    for (const auto* rec : kept) {
      if (!parse_number((*rec)[c].text)) {
        all_numeric = false;
        break;
      }
    }
    attr.kind = all_numeric ? AttributeKind::Numeric : AttributeKind::Categorical;
    if (auto h = hints.find(attr.name); h != hints.end()) {
      if (h->second == AttributeKind::Numeric && !all_numeric) {
        throw Error(ErrorCode::Parse, "attribute forced numeric has non-numeric values: " + attr.name);
      }
      attr.kind = h->second;
    }
    ds.attributes.push_back(std::move(attr));
  }

  std::unordered_map<std::string, int> class_ids;
  std::vector<std::unordered_map<std::string, int>> cat_ids(ds.attributes.size());
  ds.values.reserve(kept.size() * ds.attributes.size());
  for (const auto* rec : kept) {
    for (std::size_t a = 0; a < attr_cols.size(); ++a) {
      const auto& text_value = (*rec)[attr_cols[a]].text;
      auto& attr = ds.attributes[a];
      if (attr.is_numeric()) {
        ds.values.push_back(*parse_number(text_value));
      } else {
        auto [it, inserted] = cat_ids[a].try_emplace(text_value, static_cast<int>(attr.categories.size()));
        if (inserted) attr.categories.push_back(text_value);
        ds.values.push_back(it->second);
      }
    }
    const auto& label = (*rec)[label_col].text;
    auto [it, inserted] = class_ids.try_emplace(label, static_cast<int>(ds.classes.size()));
    if (inserted) ds.classes.push_back(label);
    ds.labels.push_back(it->second);
  }
  if (ds.classes.size() < 2) throw Error(ErrorCode::Precondition, "fewer than 2 classes after load");

  std::vector<std::size_t> all(ds.rows());
  std::iota(all.begin(), all.end(), 0);
  recompute_ranges(ds, all);
  return ds;
}

Dataset split_and_fold(Dataset ds, double test_fraction, int folds, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test_fraction must lie in (0, 1)");
  }
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "folds must be >= 2");
  const double n = static_cast<double>(ds.rows());
  if (n * test_fraction < 1.0) throw Error(ErrorCode::Precondition, "test split would be empty");
  if (n * (1.0 - test_fraction) < folds) throw Error(ErrorCode::Precondition, "too few training rows for folds");

  const std::size_t k = ds.num_classes();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.rows(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Largest-remainder allocation keeps every class within one row of its exact share.
  const auto total_test = static_cast<std::size_t>(std::max(1.0, std::round(n * test_fraction)));
  std::vector<std::size_t> test_count(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double quota = static_cast<double>(by_class[c].size()) * test_fraction;
    test_count[c] = static_cast<std::size_t>(std::floor(quota));
    assigned += test_count[c];
    remainders.emplace_back(quota - std::floor(quota), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total_test && i < remainders.size(); ++i, ++assigned) {
    ++test_count[remainders[i].second];
  }

  for (std::size_t c = 0; c < k; ++c) {
    if (by_class[c].size() < test_count[c] + static_cast<std::size_t>(folds)) {
      throw Error(ErrorCode::Precondition, "class '" + ds.classes[c] + "' too small to stratify");
    }
  }

  Rng rng(seed, "split_and_fold");
  ds.split.assign(ds.rows(), Split::Train);
  ds.folds.assign(ds.rows(), -1);
  ds.fold_count = folds;
  std::size_t position = 0;
  for (std::size_t c = 0; c < k; ++c) {
    auto& rows = by_class[c];
    rng.shuffle(std::span(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i < test_count[c]) {
        ds.split[rows[i]] = Split::Test;
      } else {
        ds.folds[rows[i]] = static_cast<int>(position++ % static_cast<std::size_t>(folds));
      }
    }
  }
  recompute_ranges(ds, ds.train_rows());
  return ds;
}

}  // namespace ensx::dataio
