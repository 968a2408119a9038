#include "heatrisk/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "heatrisk/error.hpp"

namespace heatrisk::io {

using nlohmann::json;

namespace {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

int parse_int(std::string_view s, const std::string& source) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("bad_input", source + ": expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_required(std::string_view s, const std::string& source) {
  const double v = parse_number(s);
  if (!std::isfinite(v)) throw Error("bad_input", source + ": expected a number, got '" + std::string(s) + "'");
  return v;
}

Date parse_date_in(std::string_view s, const std::string& source) {
  try {
    return parse_date(s);
  } catch (const Error&) {
    throw Error("bad_input", source + ": invalid date '" + std::string(s) + "'");
  }
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

Ring ring_from_json(const json& coords, const Projection& proj) {
  Ring r;
  for (const auto& c : coords) r.push_back(proj.forward(c.at(0).get<double>(), c.at(1).get<double>()));
  if (r.size() > 1 && r.front().x == r.back().x && r.front().y == r.back().y) r.pop_back();
  return r;
}

json ring_to_json(const Ring& ring, const Projection& proj) {
  json arr = json::array();
  for (const auto& p : ring) {
    auto [lon, lat] = proj.inverse(p);
    arr.push_back({lon, lat});
  }
  if (!ring.empty()) arr.push_back(arr.front());
  return arr;
}

Polygon polygon_from_json(const json& rings, const Projection& proj) {
  Polygon poly;
  for (std::size_t i = 0; i < rings.size(); ++i) {
    if (i == 0) {
      poly.outer = ring_from_json(rings[i], proj);
    } else {
      poly.holes.push_back(ring_from_json(rings[i], proj));
    }
  }
  return poly;
}

json load_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error("bad_input", path.string() + ": " + e.what());
  }
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (v == 0.0) return "0";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

double parse_number(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("bad_input", "not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error("bad_input", source + ": missing column '" + std::string(name) + "'");
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_artifact", "cannot open " + path.string());
  CsvTable t;
  t.source = path.string();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string key = line.substr(1, colon - 1);
        std::string value = line.substr(colon + 1);
        auto trim = [](std::string& s) {
          s.erase(0, s.find_first_not_of(' '));
          s.erase(s.find_last_not_of(' ') + 1);
        };
        trim(key);
        trim(value);
        t.provenance[key] = value;
      }
      continue;
    }
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) {
        throw Error("bad_input", t.source + ": row has " + std::to_string(cells.size()) + " fields, expected " +
                                     std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw Error("bad_input", t.source + ": no header row");
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::string s;
  for (const auto& [k, v] : table.provenance) s += "# " + k + ": " + v + "\n";
  s += join(table.header) + "\n";
  for (const auto& r : table.rows) s += join(r) + "\n";
  write_text(path, s);
}

Provenance read_provenance(const fs::path& path) {
  if (path.extension() == ".json") {
    const json j = load_json(path);
    Provenance p;
    if (j.contains("provenance")) {
      for (const auto& [k, v] : j.at("provenance").items()) p[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    return p;
  }
  std::ifstream in(path);
  if (!in) throw Error("missing_artifact", "cannot open " + path.string());
  std::string line;
  Provenance p;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(1, colon - 1), value = line.substr(colon + 1);
    key.erase(0, key.find_first_not_of(' '));
    key.erase(key.find_last_not_of(' ') + 1);
    value.erase(0, value.find_first_not_of(' '));
    p[key] = value;
  }
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write " + path.string());
    out << text;
    if (!out) throw Error("io_error", "failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_artifact", "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<StationSeries> read_stations(const fs::path& path, const StudyPeriod& period,
                                         const Projection& projection) {
  const CsvTable t = read_csv(path);
  const std::size_t cid = t.column("station_id"), clon = t.column("lon"), clat = t.column("lat"),
                    calt = t.column("alt_m"), cdate = t.column("date"), ctmax = t.column("tmax");
  std::vector<StationSeries> out;
  std::unordered_map<std::string, std::size_t> index;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : t.rows) {
    auto it = index.find(r[cid]);
    if (it == index.end()) {
      StationSeries s;
      s.id = r[cid];
      s.location = projection.forward(parse_required(r[clon], t.source), parse_required(r[clat], t.source));
      s.altitude = parse_required(r[calt], t.source);
      s.values.assign(period.n_days(), nan);
      it = index.emplace(s.id, out.size()).first;
      out.push_back(std::move(s));
    }
    const auto idx = period.index_of(parse_date_in(r[cdate], t.source));
    if (!idx) continue;
    out[it->second].values[*idx] = parse_number(r[ctmax]);
  }
  if (out.empty()) throw Error("bad_input", t.source + ": no stations");
  return out;
}

void write_stations(const fs::path& path, std::span<const StationSeries> stations,
                    const StudyPeriod& period, const Projection& projection,
                    const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.header = {"station_id", "lon", "lat", "alt_m", "date", "tmax"};
  const auto dates = period.dates();
  for (const auto& s : stations) {
    auto [lon, lat] = projection.inverse(s.location);
    for (std::size_t d = 0; d < dates.size(); ++d) {
      t.rows.push_back({s.id, format_number(lon), format_number(lat), format_number(s.altitude),
                        format_date(dates[d]), format_number(s.values[d])});
    }
  }
  write_csv(path, t);
}

MunicipalityMap read_municipalities(const fs::path& path, const Projection& projection) {
  const json j = load_json(path);
  std::vector<Municipality> items;
  try {
    for (const auto& f : j.at("features")) {
      Municipality m;
      const auto& props = f.at("properties");
      m.id = props.at("id").is_string() ? props.at("id").get<std::string>() : props.at("id").dump();
      m.altitude_m = props.value("alt_m", 0.0);
      const auto& g = f.at("geometry");
      const std::string type = g.at("type");
      if (type == "Polygon") {
        m.shape.parts.push_back(polygon_from_json(g.at("coordinates"), projection));
      } else if (type == "MultiPolygon") {
        for (const auto& p : g.at("coordinates")) m.shape.parts.push_back(polygon_from_json(p, projection));
      } else {
        throw Error("bad_input", path.string() + ": unsupported geometry " + type);
      }
      items.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error("bad_input", path.string() + ": " + e.what());
  }
  return MunicipalityMap(std::move(items));
}

void write_municipalities(const fs::path& path, const MunicipalityMap& map, const Projection& projection) {
  json features = json::array();
  for (const auto& m : map.items()) {
    json parts = json::array();
    for (const auto& p : m.shape.parts) {
      json rings = json::array();
      rings.push_back(ring_to_json(p.outer, projection));
      for (const auto& h : p.holes) rings.push_back(ring_to_json(h, projection));
      parts.push_back(rings);
    }
    json geometry = parts.size() == 1 ? json{{"type", "Polygon"}, {"coordinates", parts[0]}}
                                      : json{{"type", "MultiPolygon"}, {"coordinates", parts}};
    features.push_back({{"type", "Feature"},
                        {"properties", {{"id", m.id}, {"alt_m", m.altitude_m}}},
                        {"geometry", geometry}});
  }
  write_text(path, json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) + "\n");
}

Rect geojson_lonlat_bounds(const fs::path& path) {
  const MunicipalityMap m = read_municipalities(path, Projection{Projection::Kind::Identity, 0, 0});
  return m.bounds();
}

ingest::ReanalysisGrid read_reanalysis(const fs::path& path, const Projection& projection,
                                       bool pre_aggregated) {
  const CsvTable t = read_csv(path);
  const std::size_t cid = t.column("cell_id"), c0 = t.column("lon_min"), c1 = t.column("lat_min"),
                    c2 = t.column("lon_max"), c3 = t.column("lat_max"), cdate = t.column("date");
  std::vector<std::pair<CellId, Rect>> rects;
  std::set<CellId> seen;
  auto note_rect = [&](const std::vector<std::string>& r) {
    if (!seen.insert(r[cid]).second) return;
    const Point lo = projection.forward(parse_required(r[c0], t.source), parse_required(r[c1], t.source));
    const Point hi = projection.forward(parse_required(r[c2], t.source), parse_required(r[c3], t.source));
    rects.emplace_back(r[cid], Rect{lo.x, lo.y, hi.x, hi.y});
  };
  std::vector<ingest::DailyMax> daily;
  if (pre_aggregated) {
    const std::size_t ct = t.column("tmax");
    for (const auto& r : t.rows) {
      note_rect(r);
      daily.push_back({r[cid], parse_date_in(r[cdate], t.source), parse_required(r[ct], t.source)});
    }
  } else {
    const std::size_t ch = t.column("hour"), ct = t.column("temp");
    std::vector<ingest::HourlyRecord> hourly;
    for (const auto& r : t.rows) {
      note_rect(r);
      hourly.push_back({r[cid], parse_date_in(r[cdate], t.source), parse_int(r[ch], t.source),
                        parse_required(r[ct], t.source)});
    }
    daily = ingest::daily_max_from_hourly(hourly);
  }
  auto grid = ingest::ReanalysisGrid::from_daily(rects, daily);
  grid.validate();
  return grid;
}

void write_reanalysis_daily(const fs::path& path, const ingest::ReanalysisGrid& grid,
                            const Projection& projection, const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.header = {"cell_id", "lon_min", "lat_min", "lon_max", "lat_max", "date", "tmax"};
  for (const auto& c : grid.cells) {
    auto [lon0, lat0] = projection.inverse({c.rect.xmin, c.rect.ymin});
    auto [lon1, lat1] = projection.inverse({c.rect.xmax, c.rect.ymax});
    for (std::size_t d = 0; d < grid.dates.size(); ++d) {
      t.rows.push_back({c.id, format_number(lon0), format_number(lat0), format_number(lon1), format_number(lat1),
                        format_date(grid.dates[d]), format_number(c.tmax[d])});
    }
  }
  write_csv(path, t);
}

std::vector<cco::MortalityRecord> read_mortality(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cid = t.column("id"), cdate = t.column("date"), cm = t.column("municipality_id"),
                    cage = t.column("age"), csex = t.column("sex"), cicd = t.column("icd10");
  std::vector<cco::MortalityRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    cco::MortalityRecord rec;
    rec.id = r[cid];
    rec.date = parse_date_in(r[cdate], t.source);
    rec.municipality = r[cm];
    rec.age = parse_int(r[cage], t.source);
    if (r[csex] != "F" && r[csex] != "M") throw Error("bad_input", t.source + ": sex must be F or M");
    rec.sex = r[csex][0];
    rec.icd10 = r[cicd];
    out.push_back(std::move(rec));
  }
  return out;
}

void write_mortality(const fs::path& path, std::span<const cco::MortalityRecord> records,
                     const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.header = {"id", "date", "municipality_id", "age", "sex", "icd10"};
  for (const auto& r : records) {
    t.rows.push_back({r.id, format_date(r.date), r.municipality, std::to_string(r.age), std::string(1, r.sex), r.icd10});
  }
  write_csv(path, t);
}

cco::HolidayCalendar read_holidays(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c = t.column("date");
  std::vector<Date> d;
  for (const auto& r : t.rows) d.push_back(parse_date_in(r[c], t.source));
  return cco::HolidayCalendar(std::move(d));
}

void write_holidays(const fs::path& path, const cco::HolidayCalendar& holidays) {
  CsvTable t;
  t.header = {"date"};
  for (const auto& d : holidays.dates()) t.rows.push_back({format_date(d)});
  write_csv(path, t);
}

ExposureSurface read_surface(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cm = t.column("municipality_id"), cdate = t.column("date"), ct = t.column("tmax"),
                    cmeth = t.column("method");
  ExposureSurface s;
  std::unordered_map<std::string, std::size_t> mi;
  std::map<int, std::size_t> di;
  for (const auto& r : t.rows) {
    if (s.method.empty()) s.method = r[cmeth];
    if (r[cmeth] != s.method) throw Error("bad_input", t.source + ": mixed methods in one surface");
    if (mi.emplace(r[cm], s.municipalities.size()).second) s.municipalities.push_back(r[cm]);
    di.emplace(serial(parse_date_in(r[cdate], t.source)), 0);
  }
  std::size_t k = 0;
  for (auto& [ser, idx] : di) {
    idx = k++;
    s.dates.push_back(add_days(make_date(1970, 1, 1), ser));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(s.municipalities.size()),
                                       static_cast<Eigen::Index>(s.dates.size()), nan);
  for (const auto& r : t.rows) {
    s.values(static_cast<Eigen::Index>(mi[r[cm]]),
             static_cast<Eigen::Index>(di[serial(parse_date(r[cdate]))])) = parse_required(r[ct], t.source);
  }
  for (const auto& [key, v] : t.provenance) s.provenance[key] = v;
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error("bad_input", t.source + ": " + e.what());
  }
  s.reindex();
  return s;
}

void write_surface(const fs::path& path, const ExposureSurface& surface) {
  CsvTable t;
  t.provenance = Provenance(surface.provenance.begin(), surface.provenance.end());
  t.header = {"municipality_id", "date", "tmax", "method"};
  for (std::size_t m = 0; m < surface.municipalities.size(); ++m) {
    for (std::size_t d = 0; d < surface.dates.size(); ++d) {
      t.rows.push_back({surface.municipalities[m], format_date(surface.dates[d]),
                        format_number(surface.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d))),
                        surface.method});
    }
  }
  write_csv(path, t);
}

heatwave::HeatwaveCalendar read_heatwave(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cm = t.column("municipality_id"), cdate = t.column("date"), ch = t.column("heatwave"),
                    cs = t.column("spec_id");
  heatwave::HeatwaveCalendar cal;
  std::unordered_map<std::string, std::size_t> mi;
  std::map<int, std::size_t> di;
  for (const auto& r : t.rows) {
    if (cal.spec_id.empty()) cal.spec_id = r[cs];
    if (mi.emplace(r[cm], cal.municipalities.size()).second) cal.municipalities.push_back(r[cm]);
    di.emplace(serial(parse_date_in(r[cdate], t.source)), 0);
  }
  std::size_t k = 0;
  for (auto& [ser, idx] : di) {
    idx = k++;
    cal.dates.push_back(add_days(make_date(1970, 1, 1), ser));
  }
  cal.flags.assign(cal.municipalities.size() * cal.dates.size(), 0);
  for (const auto& r : t.rows) {
    cal.flags[mi[r[cm]] * cal.dates.size() + di[serial(parse_date(r[cdate]))]] = r[ch] == "1" ? 1 : 0;
  }
  if (auto it = t.provenance.find("method"); it != t.provenance.end()) cal.method = it->second;
  for (const auto& m : cal.municipalities) {
    auto it = t.provenance.find("threshold " + m);
    cal.thresholds.push_back(it == t.provenance.end() ? std::numeric_limits<double>::quiet_NaN()
                                                      : parse_number(it->second));
  }
  return cal;
}

void write_heatwave(const fs::path& path, const heatwave::HeatwaveCalendar& calendar,
                    const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.provenance["method"] = calendar.method;
  for (std::size_t m = 0; m < calendar.municipalities.size() && m < calendar.thresholds.size(); ++m) {
    t.provenance["threshold " + calendar.municipalities[m]] = format_number(calendar.thresholds[m]);
  }
  t.header = {"municipality_id", "date", "heatwave", "spec_id"};
  for (std::size_t m = 0; m < calendar.municipalities.size(); ++m) {
    for (std::size_t d = 0; d < calendar.dates.size(); ++d) {
      t.rows.push_back({calendar.municipalities[m], format_date(calendar.dates[d]),
                        calendar.flag(m, d) ? "1" : "0", calendar.spec_id});
    }
  }
  write_csv(path, t);
}

cco::Dataset read_dataset(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cs = t.column("stratum"), cc = t.column("case"), cd = t.column("date"),
                    cm = t.column("municipality_id"), ch = t.column("holiday");
  cco::Dataset data;
  std::vector<std::size_t> ecols, hcols;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i].starts_with("exposure_")) {
      data.methods.push_back(t.header[i].substr(9));
      ecols.push_back(i);
    } else if (t.header[i].starts_with("hw_")) {
      data.heatwave_ids.push_back(t.header[i].substr(3));
      hcols.push_back(i);
    }
  }
  for (const auto& r : t.rows) {
    cco::Row row;
    row.stratum = static_cast<std::size_t>(parse_int(r[cs], t.source));
    row.is_case = r[cc] == "1";
    row.date = parse_date_in(r[cd], t.source);
    row.holiday = r[ch] == "1";
    for (auto c : ecols) row.exposure.push_back(parse_required(r[c], t.source));
    for (auto c : hcols) row.heatwave.push_back(r[c] == "1" ? 1 : 0);
    if (row.stratum == data.strata.size()) {
      data.strata.push_back({std::to_string(row.stratum), r[cm], data.rows.size(), 0});
    } else if (row.stratum + 1 != data.strata.size()) {
      throw Error("bad_input", t.source + ": strata must be contiguous and numbered from 0");
    }
    ++data.strata.back().n_rows;
    data.rows.push_back(std::move(row));
  }
  data.validate();
  return data;
}

void write_dataset(const fs::path& path, const cco::Dataset& data, const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.provenance["dropped_records"] = std::to_string(data.dropped.size());
  t.header = {"stratum", "case", "date", "municipality_id"};
  for (const auto& m : data.methods) t.header.push_back("exposure_" + m);
  for (const auto& h : data.heatwave_ids) t.header.push_back("hw_" + h);
  t.header.push_back("holiday");
  for (const auto& s : data.strata) {
    for (std::size_t r = s.first_row; r < s.first_row + s.n_rows; ++r) {
      const auto& row = data.rows[r];
      std::vector<std::string> cells = {std::to_string(row.stratum), row.is_case ? "1" : "0",
                                        format_date(row.date), s.municipality};
      for (double e : row.exposure) cells.push_back(format_number(e));
      for (auto h : row.heatwave) cells.push_back(h ? "1" : "0");
      cells.push_back(row.holiday ? "1" : "0");
      t.rows.push_back(std::move(cells));
    }
  }
  write_csv(path, t);
}

void write_curve(const fs::path& path, const epi::RiskCurve& curve, const Provenance& provenance) {
  CsvTable t;
  t.provenance = provenance;
  t.provenance["mmt"] = format_number(curve.mmt);
  t.header = {"bin_mid", "logrr_med", "logrr_lo", "logrr_hi", "rr_norm"};
  for (std::size_t b = 0; b < curve.bin_mid.size(); ++b) {
    t.rows.push_back({format_number(curve.bin_mid[b]), format_number(curve.logrr_median[b]),
                      format_number(curve.logrr_lower[b]), format_number(curve.logrr_upper[b]),
                      format_number(curve.rr[b])});
  }
  write_csv(path, t);
}

}  // namespace heatrisk::io
