#ifndef SURCMM_TRIANGLES_HPP
#define SURCMM_TRIANGLES_HPP

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "surcmm/errors.hpp"
#include "surcmm/math.hpp"

namespace surcmm {

enum class Lob : int { lob1 = 1, lob2 = 2 };

// 1-based accident/development indices. Observed (upper-triangle) cells
// satisfy i + j - 1 <= I; cells to predict satisfy i + j - 1 > I, i >= 2.
struct TriangleIndex {
    int accident_year = 0;
    int development_year = 0;
    friend bool operator==(const TriangleIndex&, const TriangleIndex&) = default;
    friend auto operator<=>(const TriangleIndex&, const TriangleIndex&) = default;
};

inline int upper_cell_count(int I) { return I * (I + 1) / 2; }
inline int lower_cell_count(int I) { return I * (I - 1) / 2; }

inline bool is_observed_cell(int I, int i, int j) {
    return i >= 1 && j >= 1 && i <= I && j <= I && i + j - 1 <= I;
}

// Canonical storage order of observed cells: i = 1..I, then j = 1..I+1-i.
inline int upper_cell_offset(int I, int i, int j) {
    return (i - 1) * (I + 1) - (i - 1) * i / 2 + (j - 1);
}

inline std::vector<TriangleIndex> upper_triangle_cells(int I) {
    std::vector<TriangleIndex> cells;
    cells.reserve(static_cast<size_t>(upper_cell_count(I)));
    for (int i = 1; i <= I; ++i)
        for (int j = 1; j <= I + 1 - i; ++j) cells.push_back({i, j});
    return cells;
}

// Cells of the reserve sum: i = 2..I, j = I-i+2..I.
inline std::vector<TriangleIndex> lower_triangle_cells(int I) {
    if (I < 2) throw ValidationError("lower_triangle_cells: I must be >= 2");
    std::vector<TriangleIndex> cells;
    cells.reserve(static_cast<size_t>(lower_cell_count(I)));
    for (int i = 2; i <= I; ++i)
        for (int j = I - i + 2; j <= I; ++j) cells.push_back({i, j});
    return cells;
}

struct LossTriangle {
    Lob lob = Lob::lob1;
    int size = 0;                  // I
    std::vector<double> cells;     // observed incremental paid losses, canonical order
    std::vector<double> premiums;  // omega_i, length I

    double cell(int i, int j) const { return cells[static_cast<size_t>(upper_cell_offset(size, i, j))]; }
    friend bool operator==(const LossTriangle&, const LossTriangle&) = default;
};

struct StandardizedTriangle {
    int size = 0;
    std::vector<double> ratios;    // loss ratios y = X / omega, canonical order

    double cell(int i, int j) const { return ratios[static_cast<size_t>(upper_cell_offset(size, i, j))]; }
    friend bool operator==(const StandardizedTriangle&, const StandardizedTriangle&) = default;
};

struct LossTrianglePair {
    std::string company_id;
    LossTriangle triangle_1;       // LOB1
    LossTriangle triangle_2;       // LOB2
    friend bool operator==(const LossTrianglePair&, const LossTrianglePair&) = default;
};

struct Portfolio {
    std::vector<LossTrianglePair> companies;  // sorted by company_id
    int size = 0;                             // shared I
    friend bool operator==(const Portfolio&, const Portfolio&) = default;
};

inline void validate_triangle(const LossTriangle& t, const std::string& company_id) {
    const std::string where = "company " + company_id + " lob " + std::to_string(static_cast<int>(t.lob));
    if (t.size < 2) throw ValidationError(where + ": triangle size must be >= 2");
    if (static_cast<int>(t.cells.size()) != upper_cell_count(t.size))
        throw ValidationError(where + ": expected " + std::to_string(upper_cell_count(t.size)) + " observed cells");
    if (static_cast<int>(t.premiums.size()) != t.size)
        throw ValidationError(where + ": premiums must have length " + std::to_string(t.size));
    for (int i = 1; i <= t.size; ++i)
        if (!(t.premiums[static_cast<size_t>(i - 1)] > 0.0))
            throw ValidationError(where + ": premium for accident year " + std::to_string(i) + " must be positive");
    for (int i = 1; i <= t.size; ++i)
        for (int j = 1; j <= t.size + 1 - i; ++j)
            if (!(t.cell(i, j) > 0.0))
                throw ValidationError(where + ": nonpositive incremental paid loss at cell (" +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
}

inline void validate_portfolio(const Portfolio& p) {
    if (p.companies.empty()) throw ValidationError("portfolio has no companies");
    std::set<std::string> ids;
    for (const auto& c : p.companies) {
        if (!ids.insert(c.company_id).second)
            throw ValidationError("duplicate company_id " + c.company_id);
        if (c.triangle_1.lob == c.triangle_2.lob)
            throw ValidationError("company " + c.company_id + ": both triangles carry the same lob id");
        if (c.triangle_1.size != p.size || c.triangle_2.size != p.size)
            throw ValidationError("company " + c.company_id + ": triangle size differs from portfolio I");
        validate_triangle(c.triangle_1, c.company_id);
        validate_triangle(c.triangle_2, c.company_id);
    }
}

inline StandardizedTriangle standardize(const LossTriangle& t) {
    StandardizedTriangle s;
    s.size = t.size;
    s.ratios.resize(t.cells.size());
    for (int i = 1; i <= t.size; ++i)
        for (int j = 1; j <= t.size + 1 - i; ++j) {
            const int off = upper_cell_offset(t.size, i, j);
            s.ratios[static_cast<size_t>(off)] =
                t.cells[static_cast<size_t>(off)] / t.premiums[static_cast<size_t>(i - 1)];
        }
    return s;
}

// ---------------------------------------------------------------------------
// Long-CSV ingestion. Header row must be exactly:
//   company_id,lob,accident_year,development_lag,incremental_paid,premium
// ---------------------------------------------------------------------------

enum class PortfolioFormat { long_csv };

struct LoadOptions {
    bool drop_invalid_companies = false;       // drop companies with nonpositive losses
    std::vector<std::string>* warnings = nullptr;
};

namespace detail {

inline const char* const kPortfolioHeader =
    "company_id,lob,accident_year,development_lag,incremental_paid,premium";

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline double parse_double_field(const std::string& s, const std::string& field, int line_no) {
    double v = 0.0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse " + field + " value '" + s + "'");
    return v;
}

inline long parse_int_field(const std::string& s, const std::string& field, int line_no) {
    long v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse " + field + " value '" + s + "'");
    return v;
}

struct RawRow {
    std::string company;
    int lob = 0;
    long accident_year = 0;
    long development_lag = 0;
    double incremental_paid = 0.0;
    double premium = 0.0;
    int line_no = 0;
};

} // namespace detail

inline Portfolio load_portfolio(const std::string& path,
                                PortfolioFormat format = PortfolioFormat::long_csv,
                                const LoadOptions& options = {}) {
    (void)format;  // long_csv is the only ingestion format
    std::ifstream in(path);
    if (!in) throw IoError("cannot open portfolio file " + path);

    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != detail::kPortfolioHeader)
        throw ValidationError(path + ": header row must be exactly '" + std::string(detail::kPortfolioHeader) + "'");

    std::vector<detail::RawRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 6)
            throw ValidationError("line " + std::to_string(line_no) + ": expected 6 fields, got " +
                                  std::to_string(fields.size()));
        detail::RawRow r;
        r.company = fields[0];
        r.lob = static_cast<int>(detail::parse_int_field(fields[1], "lob", line_no));
        if (r.lob != 1 && r.lob != 2)
            throw ValidationError("line " + std::to_string(line_no) + ": lob must be 1 or 2");
        r.accident_year = detail::parse_int_field(fields[2], "accident_year", line_no);
        r.development_lag = detail::parse_int_field(fields[3], "development_lag", line_no);
        r.incremental_paid = detail::parse_double_field(fields[4], "incremental_paid", line_no);
        r.premium = detail::parse_double_field(fields[5], "premium", line_no);
        r.line_no = line_no;
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ValidationError(path + ": no data rows");

    // Re-index accident years and development lags chronologically, 1..I.
    std::set<long> ay_set, dl_set;
    for (const auto& r : rows) {
        ay_set.insert(r.accident_year);
        dl_set.insert(r.development_lag);
    }
    const int I = static_cast<int>(ay_set.size());
    if (static_cast<int>(dl_set.size()) > I)
        throw ValidationError(path + ": more development lags than accident years");
    std::map<long, int> ay_index, dl_index;
    int k = 1;
    for (long y : ay_set) ay_index[y] = k++;
    k = 1;
    for (long d : dl_set) dl_index[d] = k++;

    struct CellSlot {
        std::optional<double> value;
    };
    struct TriangleDraft {
        std::vector<std::optional<double>> cells;
        std::vector<std::optional<double>> premiums;
    };
    // company -> lob -> draft; std::map keeps company order canonical (sorted ids)
    std::map<std::string, std::map<int, TriangleDraft>> drafts;

    for (const auto& r : rows) {
        const int i = ay_index[r.accident_year];
        const int j = dl_index[r.development_lag];
        const std::string cell_name = "company " + r.company + " lob " + std::to_string(r.lob) +
                                      " cell (" + std::to_string(i) + "," + std::to_string(j) + ")";
        if (!is_observed_cell(I, i, j))
            throw ValidationError("line " + std::to_string(r.line_no) + ": " + cell_name +
                                  " lies outside the observed upper triangle");
        auto& draft = drafts[r.company][r.lob];
        if (draft.cells.empty()) {
            draft.cells.resize(static_cast<size_t>(upper_cell_count(I)));
            draft.premiums.resize(static_cast<size_t>(I));
        }
        auto& slot = draft.cells[static_cast<size_t>(upper_cell_offset(I, i, j))];
        if (slot.has_value())
            throw ValidationError("line " + std::to_string(r.line_no) + ": duplicate row for " + cell_name);
        slot = r.incremental_paid;
        auto& prem = draft.premiums[static_cast<size_t>(i - 1)];
        if (prem.has_value() && *prem != r.premium)
            throw ValidationError("line " + std::to_string(r.line_no) + ": inconsistent premium for company " +
                                  r.company + " lob " + std::to_string(r.lob) + " accident year " +
                                  std::to_string(i));
        prem = r.premium;
    }

    Portfolio portfolio;
    portfolio.size = I;
    for (auto& [company, by_lob] : drafts) {
        for (int lob : {1, 2})
            if (!by_lob.count(lob))
                throw ValidationError("company " + company + ": missing lob " + std::to_string(lob));

        bool drop = false;
        LossTrianglePair pair;
        pair.company_id = company;
        for (int lob : {1, 2}) {
            auto& draft = by_lob[lob];
            LossTriangle t;
            t.lob = lob == 1 ? Lob::lob1 : Lob::lob2;
            t.size = I;
            t.cells.resize(static_cast<size_t>(upper_cell_count(I)));
            t.premiums.resize(static_cast<size_t>(I));
            for (int i = 1; i <= I && !drop; ++i) {
                for (int j = 1; j <= I + 1 - i; ++j) {
                    const auto& slot = draft.cells[static_cast<size_t>(upper_cell_offset(I, i, j))];
                    if (!slot.has_value())
                        throw ValidationError("company " + company + " lob " + std::to_string(lob) +
                                              ": missing upper-triangle cell (" + std::to_string(i) + "," +
                                              std::to_string(j) + ")");
                    if (!(*slot > 0.0)) {
                        const std::string msg = "company " + company + " lob " + std::to_string(lob) +
                                                ": nonpositive incremental paid loss at cell (" +
                                                std::to_string(i) + "," + std::to_string(j) + ")";
                        if (options.drop_invalid_companies) {
                            if (options.warnings)
                                options.warnings->push_back("dropping " + msg);
                            drop = true;
                            break;
                        }
                        throw ValidationError(msg);
                    }
                    t.cells[static_cast<size_t>(upper_cell_offset(I, i, j))] = *slot;
                }
                if (drop) break;
                const auto& prem = draft.premiums[static_cast<size_t>(i - 1)];
                if (!prem.has_value())
                    throw ValidationError("company " + company + " lob " + std::to_string(lob) +
                                          ": missing premium for accident year " + std::to_string(i));
                t.premiums[static_cast<size_t>(i - 1)] = *prem;
            }
            if (drop) break;
            if (lob == 1)
                pair.triangle_1 = std::move(t);
            else
                pair.triangle_2 = std::move(t);
        }
        if (!drop) portfolio.companies.push_back(std::move(pair));
    }
    if (portfolio.companies.empty())
        throw ValidationError(path + ": no valid companies after filtering");
    validate_portfolio(portfolio);
    return portfolio;
}

inline void write_portfolio_csv(const Portfolio& portfolio, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << detail::kPortfolioHeader << "\n";
    for (const auto& c : portfolio.companies) {
        for (const LossTriangle* t : {&c.triangle_1, &c.triangle_2}) {
            for (int i = 1; i <= t->size; ++i)
                for (int j = 1; j <= t->size + 1 - i; ++j)
                    out << c.company_id << ',' << static_cast<int>(t->lob) << ',' << i << ',' << j << ','
                        << format_double(t->cell(i, j)) << ','
                        << format_double(t->premiums[static_cast<size_t>(i - 1)]) << "\n";
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

} // namespace surcmm

#endif // SURCMM_TRIANGLES_HPP
