#pragma once

// Result tables (csv / markdown / json) and static SVG plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "crl/trainer.hpp"
#include "crl/types.hpp"

namespace crl {

struct ResultRow {
    double noise_ratio = 0.0;
    std::string noise_level;  // e.g. "3-8"; empty when there is no noise
    std::string strategy;
    std::optional<int> k;     // JO start epoch, only for ss_jo
    std::string variant;      // ablation tag such as "alpha=0.5"; may be empty
    double dice = 0.0;
    std::uint64_t seed = 0;
    double runtime_s = 0.0;

    void validate() const {
        if (!(dice >= 0.0 && dice <= 1.0)) throw ConfigError("result row: Dice outside [0, 1]");
        if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0)) throw ConfigError("result row: noise ratio outside [0, 1]");
    }
};

enum class TableFormat { Csv, Markdown, Json };

inline TableFormat parse_table_format(const std::string& s) {
    if (s == "csv") return TableFormat::Csv;
    if (s == "markdown" || s == "md") return TableFormat::Markdown;
    if (s == "json") return TableFormat::Json;
    throw ConfigError("unknown table format '" + s + "' (expected csv, markdown or json)");
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline int strategy_rank(const std::string& s) {
    static const std::vector<std::string> order = {"vanilla", "coteach_small_loss", "ss", "ss_jo"};
    const auto it = std::find(order.begin(), order.end(), s);
    return static_cast<int>(it - order.begin());
}

inline auto row_key(const ResultRow& r) {
    return std::make_tuple(r.noise_ratio, r.noise_level, strategy_rank(r.strategy), r.strategy, r.k.value_or(-1),
                           r.variant, r.seed);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const char* what) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw DataError(std::string("bad ") + what + " '" + s + "'");
    }
    if (pos != s.size()) throw DataError(std::string("bad ") + what + " '" + s + "'");
    return v;
}

}  // namespace detail

inline std::vector<ResultRow> sorted_rows(std::vector<ResultRow> rows) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ResultRow& a, const ResultRow& b) { return detail::row_key(a) < detail::row_key(b); });
    return rows;
}

inline const std::vector<std::string>& table_columns() {
    static const std::vector<std::string> cols = {"noise_ratio", "noise_level", "strategy", "k",
                                                  "variant",     "dice",        "seed",     "runtime_s"};
    return cols;
}

// Cell strings of one row in table_columns() order.
inline std::vector<std::string> row_cells(const ResultRow& r) {
    return {detail::fmt("%.2f", r.noise_ratio),
            r.noise_level,
            r.strategy,
            r.k ? std::to_string(*r.k) : std::string(),
            r.variant,
            detail::fmt("%.4f", r.dice),
            std::to_string(r.seed),
            detail::fmt("%.1f", r.runtime_s)};
}

inline std::string emit_table(const std::vector<ResultRow>& input, TableFormat format) {
    if (input.empty()) throw ConfigError("emit_table: no rows");
    for (const auto& r : input) r.validate();
    const auto rows = sorted_rows(input);
    const auto& cols = table_columns();
    std::ostringstream out;
    switch (format) {
        case TableFormat::Csv: {
            for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
            out << '\n';
            for (const auto& r : rows) {
                const auto cells = row_cells(r);
                for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
                out << '\n';
            }
            break;
        }
        case TableFormat::Markdown: {
            out << '|';
            for (const auto& c : cols) out << ' ' << c << " |";
            out << "\n|";
            for (std::size_t i = 0; i < cols.size(); ++i) out << (i < 2 || i == 3 || i >= 5 ? "---:|" : "---|");
            out << '\n';
            for (const auto& r : rows) {
                out << '|';
                for (const auto& c : row_cells(r)) out << ' ' << (c.empty() ? "-" : c) << " |";
                out << '\n';
            }
            break;
        }
        case TableFormat::Json: {
            // Numbers are written from the same rounded text as the csv cells.
            out << "[\n";
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto cells = row_cells(rows[i]);
                out << "  {\"noise_ratio\": " << cells[0] << ", \"noise_level\": " << nlohmann::json(cells[1]).dump()
                    << ", \"strategy\": " << nlohmann::json(cells[2]).dump()
                    << ", \"k\": " << (cells[3].empty() ? "null" : cells[3])
                    << ", \"variant\": " << nlohmann::json(cells[4]).dump() << ", \"dice\": " << cells[5]
                    << ", \"seed\": " << cells[6] << ", \"runtime_s\": " << cells[7] << '}'
                    << (i + 1 < rows.size() ? "," : "") << '\n';
            }
            out << "]\n";
            break;
        }
    }
    return out.str();
}

inline std::vector<ResultRow> parse_csv_table(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("csv table: missing header");
    const auto header = detail::split(line, ',');
    if (header != table_columns()) throw DataError("csv table: unexpected header '" + line + "'");
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = detail::split(line, ',');
        if (c.size() != header.size()) throw DataError("csv table: wrong column count in '" + line + "'");
        ResultRow r;
        r.noise_ratio = detail::parse_double(c[0], "noise_ratio");
        r.noise_level = c[1];
        r.strategy = c[2];
        if (!c[3].empty()) r.k = static_cast<int>(detail::parse_double(c[3], "k"));
        r.variant = c[4];
        r.dice = detail::parse_double(c[5], "dice");
        r.seed = static_cast<std::uint64_t>(std::stoull(c[6]));
        r.runtime_s = detail::parse_double(c[7], "runtime_s");
        r.validate();
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<ResultRow> parse_json_table(const std::string& text) {
    std::vector<ResultRow> rows;
    for (const auto& j : nlohmann::json::parse(text)) {
        ResultRow r;
        r.noise_ratio = j.at("noise_ratio").get<double>();
        r.noise_level = j.at("noise_level").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        if (!j.at("k").is_null()) r.k = j.at("k").get<int>();
        r.variant = j.at("variant").get<std::string>();
        r.dice = j.at("dice").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.runtime_s = j.at("runtime_s").get<double>();
        rows.push_back(r);
    }
    return rows;
}

// Mean and spread over seeds for each configuration.
struct SummaryRow {
    double noise_ratio = 0.0;
    std::string noise_level;
    std::string strategy;
    std::optional<int> k;
    std::string variant;
    double mean_dice = 0.0;
    double std_dice = 0.0;  // population standard deviation
    std::size_t seeds = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& input) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> values;
    for (const auto& r : sorted_rows(input)) {
        if (out.empty() || out.back().noise_ratio != r.noise_ratio || out.back().noise_level != r.noise_level ||
            out.back().strategy != r.strategy || out.back().k != r.k || out.back().variant != r.variant) {
            out.push_back({r.noise_ratio, r.noise_level, r.strategy, r.k, r.variant, 0.0, 0.0, 0});
            values.emplace_back();
        }
        values.back().push_back(r.dice);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = values[i];
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        out[i].mean_dice = m;
        out[i].std_dice = std::sqrt(s / static_cast<double>(v.size()));
        out[i].seeds = v.size();
    }
    return out;
}

inline std::string emit_summary_markdown(const std::vector<SummaryRow>& rows) {
    std::ostringstream out;
    out << "| noise_ratio | noise_level | strategy | k | variant | mean_dice | std | seeds |\n"
        << "|---:|---:|---|---:|---|---:|---:|---:|\n";
    for (const auto& r : rows)
        out << "| " << detail::fmt("%.2f", r.noise_ratio) << " | " << (r.noise_level.empty() ? "-" : r.noise_level)
            << " | " << r.strategy << " | " << (r.k ? std::to_string(*r.k) : "-") << " | "
            << (r.variant.empty() ? "-" : r.variant) << " | " << detail::fmt("%.4f", r.mean_dice) << " | "
            << detail::fmt("%.4f", r.std_dice) << " | " << r.seeds << " |\n";
    return out.str();
}

// ---- SVG plots ---------------------------------------------------------------

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

struct Bar {
    std::string label;
    double value = 0.0;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char ch : s) {
        switch (ch) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += ch;
        }
    }
    return o;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    return colors[i % 7];
}

constexpr double kW = 640, kH = 400, kL = 60, kR = 160, kT = 40, kB = 50;

inline void svg_frame(std::ostringstream& o, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, double ylo, double yhi) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
      << "</text>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << xml_escape(xlabel)
      << "</text>\n"
      << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (kT + kH - kB) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = ylo + (yhi - ylo) * i / 4.0;
        const double y = kH - kB - (kH - kB - kT) * i / 4.0;
        o << "<text x=\"" << kL - 6 << "\" y=\"" << fmt("%.1f", y + 4) << "\" text-anchor=\"end\">" << fmt("%.3f", v)
          << "</text>\n";
    }
}

}  // namespace detail

inline std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                                  const std::string& xlabel, const std::string& ylabel) {
    using namespace detail;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xlo = std::min(xlo, x), xhi = std::max(xhi, x);
            ylo = std::min(ylo, y), yhi = std::max(yhi, y);
        }
    if (xlo > xhi) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
    if (xhi == xlo) xhi = xlo + 1;
    if (yhi == ylo) yhi = ylo + 1e-3;
    std::ostringstream o;
    svg_frame(o, title, xlabel, ylabel, ylo, yhi);
    auto px = [&](double x) { return kL + (kW - kR - kL) * (x - xlo) / (xhi - xlo); };
    auto py = [&](double y) { return kH - kB - (kH - kB - kT) * (y - ylo) / (yhi - ylo); };
    for (std::size_t i = 0; i < series.size(); ++i) {
        o << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"2\" points=\"";
        for (std::size_t j = 0; j < series[i].points.size(); ++j)
            o << (j ? " " : "") << fmt("%.1f", px(series[i].points[j].first)) << ','
              << fmt("%.1f", py(series[i].points[j].second));
        o << "\"/>\n";
        o << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 16 * (i + 1) << "\" fill=\"" << palette(i) << "\">"
          << xml_escape(series[i].label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline std::string bar_chart_svg(const std::vector<Bar>& bars, const std::string& title, const std::string& ylabel) {
    using namespace detail;
    double ylo = 0.0, yhi = 1e-3;
    for (const auto& b : bars) yhi = std::max(yhi, b.value);
    // Zoom onto the range of interest when all bars are high.
    double lo_v = 1e300;
    for (const auto& b : bars) lo_v = std::min(lo_v, b.value);
    if (!bars.empty() && lo_v > 0.5 * yhi) ylo = std::max(0.0, lo_v - 0.25 * (yhi - lo_v) - 1e-3);
    std::ostringstream o;
    svg_frame(o, title, "", ylabel, ylo, yhi);
    const double slot = bars.empty() ? 0.0 : (kW - kR - kL) / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double h = (kH - kB - kT) * (bars[i].value - ylo) / (yhi - ylo);
        const double x = kL + slot * i + slot * 0.15;
        o << "<rect x=\"" << fmt("%.1f", x) << "\" y=\"" << fmt("%.1f", kH - kB - h) << "\" width=\""
          << fmt("%.1f", slot * 0.7) << "\" height=\"" << fmt("%.1f", h) << "\" fill=\"" << palette(i) << "\"/>\n"
          << "<text x=\"" << fmt("%.1f", x + slot * 0.35) << "\" y=\"" << kH - kB + 16
          << "\" text-anchor=\"middle\">" << xml_escape(bars[i].label) << "</text>\n"
          << "<text x=\"" << fmt("%.1f", x + slot * 0.35) << "\" y=\"" << fmt("%.1f", kH - kB - h - 4)
          << "\" text-anchor=\"middle\">" << fmt("%.4f", bars[i].value) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// Test Dice per evaluated epoch, one series per labelled history.
inline Series dice_series(const std::string& label, const std::vector<EpochMetrics>& history) {
    Series s{label, {}};
    for (const auto& m : history)
        if (m.test_dice) s.points.emplace_back(m.epoch + 1, *m.test_dice);
    return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw DataError("write failed for '" + path.string() + "'");
}

// Writes dice_curves.svg and, when the rows carry them, alpha_sweep.svg and k_sweep.svg.
inline std::vector<std::filesystem::path> emit_plots(
    const std::vector<std::pair<std::string, std::vector<EpochMetrics>>>& histories, const std::vector<ResultRow>& rows,
    const std::filesystem::path& out_dir) {
    if (histories.empty() && rows.empty()) throw ConfigError("emit_plots: nothing to plot");
    std::vector<std::filesystem::path> written;
    if (!histories.empty()) {
        std::vector<Series> series;
        for (const auto& [label, h] : histories) series.push_back(dice_series(label, h));
        const auto p = out_dir / "dice_curves.svg";
        write_text_file(p, line_chart_svg(series, "Test Dice per epoch", "epoch", "Dice"));
        written.push_back(p);
    }
    std::map<double, std::vector<double>> alpha, k;
    for (const auto& r : rows) {
        if (r.variant.rfind("alpha=", 0) == 0) alpha[std::stod(r.variant.substr(6))].push_back(r.dice);
        if (r.strategy == "ss_jo" && r.k && r.variant.empty()) k[*r.k].push_back(r.dice);
    }
    auto bars_of = [](const std::map<double, std::vector<double>>& groups, const char* prefix, const char* f) {
        std::vector<Bar> bars;
        for (const auto& [key, v] : groups) {
            double m = 0.0;
            for (double x : v) m += x;
            bars.push_back({prefix + detail::fmt(f, key), m / static_cast<double>(v.size())});
        }
        return bars;
    };
    if (!alpha.empty()) {
        const auto p = out_dir / "alpha_sweep.svg";
        write_text_file(p, bar_chart_svg(bars_of(alpha, "a=", "%g"), "Mean test Dice by alpha", "Dice"));
        written.push_back(p);
    }
    if (k.size() > 1) {
        const auto p = out_dir / "k_sweep.svg";
        write_text_file(p, bar_chart_svg(bars_of(k, "k=", "%g"), "Mean test Dice by JO start epoch", "Dice"));
        written.push_back(p);
    }
    return written;
}

}  // namespace crl
