#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "surcmm/simulator.hpp"
#include "surcmm/triangles.hpp"

using namespace surcmm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "surcmm_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Small well-formed long CSV: `companies` companies, triangle size I, losses
// loss(c, lob, i, j), premium 1000*(i + lob).
std::string make_csv(int companies, int I, const std::function<double(int, int, int, int)>& loss) {
    std::ostringstream out;
    out << "company_id,lob,accident_year,development_lag,incremental_paid,premium\n";
    for (int c = 0; c < companies; ++c)
        for (int lob = 1; lob <= 2; ++lob)
            for (int i = 1; i <= I; ++i)
                for (int j = 1; j <= I + 1 - i; ++j)
                    out << "C" << c << ',' << lob << ',' << 1987 + i << ',' << j << ','
                        << format_double(loss(c, lob, i, j)) << ',' << format_double(1000.0 * (i + lob)) << "\n";
    return out.str();
}

Portfolio load_text(const std::string& text, const std::string& name, const LoadOptions& options = {}) {
    const auto path = temp_file(name);
    std::ofstream(path) << text;
    return load_portfolio(path.string(), PortfolioFormat::long_csv, options);
}

} // namespace

TEST_CASE("lower_triangle_cells enumerates the reserve index set") {
    CHECK(lower_triangle_cells(2) == std::vector<TriangleIndex>{{2, 2}});
    CHECK(lower_triangle_cells(3) == std::vector<TriangleIndex>{{2, 3}, {3, 2}, {3, 3}});

    // brute-force count of i + j - 1 > I with i >= 2
    int brute = 0;
    for (int i = 1; i <= 10; ++i)
        for (int j = 1; j <= 10; ++j)
            if (i + j - 1 > 10 && i >= 2) ++brute;
    CHECK(brute == 45);
    CHECK(lower_triangle_cells(10).size() == 45);
    for (const auto& cell : lower_triangle_cells(10)) {
        CHECK(cell.accident_year >= 2);
        CHECK(cell.development_year >= 10 - cell.accident_year + 2);
    }
    CHECK_THROWS_AS(lower_triangle_cells(1), ValidationError);
}

TEST_CASE("observed plus to-predict cells tile the square") {
    for (int I : {2, 3, 7, 10})
        CHECK(upper_cell_count(I) + static_cast<int>(lower_triangle_cells(I).size()) == I * I);
}

TEST_CASE("standardize divides by the accident-year premium") {
    LossTriangle t;
    t.lob = Lob::lob1;
    t.size = 2;
    t.premiums = {200.0, 300.0};
    t.cells = {100.0, 60.0, 150.0};  // cells (1,1), (1,2), (2,1)
    const auto s = standardize(t);
    CHECK(s.cell(1, 1) == 0.5);
    CHECK(s.cell(1, 2) == 0.3);
    CHECK(s.cell(2, 1) == 0.5);

    for (auto& c : t.cells) c = 0.0;
    t.cells = {200.0, 200.0, 300.0};  // X equal to premium everywhere
    const auto ones = standardize(t);
    for (double r : ones.ratios) CHECK(r == 1.0);
}

TEST_CASE("standardize round-trips bit-exactly on generator output") {
    auto config = default_appendix_e_config();
    config.n_companies = 4;
    config.seed = 11;
    const auto [portfolio, truth] = generate_portfolio(config);
    for (const auto& c : portfolio.companies)
        for (const LossTriangle* t : {&c.triangle_1, &c.triangle_2}) {
            const auto s = standardize(*t);
            for (int i = 1; i <= t->size; ++i)
                for (int j = 1; j <= t->size + 1 - i; ++j)
                    CHECK(s.cell(i, j) * t->premiums[static_cast<size_t>(i - 1)] == t->cell(i, j));
        }
}

TEST_CASE("load_portfolio accepts a minimal well-formed file") {
    const auto loss = [](int, int lob, int i, int j) { return 100.0 + lob + i + j; };
    const auto p = load_text(make_csv(1, 10, loss), "minimal.csv");
    CHECK(p.companies.size() == 1);
    CHECK(p.size == 10);
    CHECK(p.companies[0].triangle_1.cells.size() == 55);
    CHECK(p.companies[0].triangle_2.cells.size() == 55);
    // accident years 1988..1997 re-indexed 1..10
    CHECK(p.companies[0].triangle_1.cell(1, 1) == 100.0 + 1 + 1 + 1);
}

TEST_CASE("load_portfolio handles a 30-company portfolio") {
    auto config = default_appendix_e_config();
    config.seed = 5;
    const auto [portfolio, truth] = generate_portfolio(config);
    const auto path = temp_file("thirty.csv");
    write_portfolio_csv(portfolio, path.string());
    const auto loaded = load_portfolio(path.string());
    CHECK(loaded.companies.size() == 30);
    CHECK(loaded.size == 10);
    CHECK(loaded == portfolio);
}

TEST_CASE("load_portfolio rejects nonpositive losses, naming the cell") {
    const auto loss = [](int c, int lob, int i, int j) {
        if (c == 0 && lob == 2 && i == 3 && j == 2) return -5.0;
        return 10.0;
    };
    const auto text = make_csv(2, 4, loss);
    try {
        load_text(text, "negative.csv");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("lob 2") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }

    std::vector<std::string> warnings;
    LoadOptions options;
    options.drop_invalid_companies = true;
    options.warnings = &warnings;
    const auto p = load_text(text, "negative.csv", options);
    CHECK(p.companies.size() == 1);  // C0 dropped with a warning, C1 kept
    CHECK(warnings.size() == 1);
}

TEST_CASE("load_portfolio rejects a missing upper-triangle cell") {
    const auto loss = [](int, int, int, int) { return 7.0; };
    std::string text = make_csv(1, 4, loss);
    const auto pos = text.find("C0,1,1990,2");  // cell (3,2)
    REQUIRE(pos != std::string::npos);
    const auto end = text.find('\n', pos);
    text.erase(pos, end - pos + 1);
    try {
        load_text(text, "missing.csv");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("missing upper-triangle cell (3,2)") != std::string::npos);
    }
}

TEST_CASE("load_portfolio rejects inconsistent premiums") {
    const auto loss = [](int, int, int, int) { return 7.0; };
    std::string text = make_csv(1, 3, loss);
    const auto pos = text.find("C0,1,1988,2,7,2000");
    REQUIRE(pos != std::string::npos);
    std::string line = "C0,1,1988,2,7,2222";
    text.replace(pos, text.find('\n', pos) - pos, line);
    CHECK_THROWS_WITH(load_text(text, "premium.csv"),
                      Catch::Matchers::ContainsSubstring("inconsistent premium"));
}

TEST_CASE("load_portfolio is row-order insensitive") {
    const auto loss = [](int c, int lob, int i, int j) { return 50.0 + 3 * c + lob + 0.5 * i + 0.25 * j; };
    const std::string text = make_csv(3, 5, loss);

    std::vector<std::string> lines;
    std::stringstream ss(text);
    std::string line;
    std::getline(ss, line);
    const std::string header = line;
    while (std::getline(ss, line))
        if (!line.empty()) lines.push_back(line);
    std::mt19937 rng(99);
    std::shuffle(lines.begin(), lines.end(), rng);
    std::ostringstream shuffled;
    shuffled << header << "\n";
    for (const auto& l : lines) shuffled << l << "\n";

    const auto a = load_text(text, "ordered.csv");
    const auto b = load_text(shuffled.str(), "shuffled.csv");
    CHECK(a == b);
}

TEST_CASE("load_portfolio rejects malformed input") {
    CHECK_THROWS_AS(load_portfolio("/nonexistent/file.csv"), IoError);
    CHECK_THROWS_AS(load_text("company,lob\n", "badheader.csv"), ValidationError);
    const auto loss = [](int, int, int, int) { return 7.0; };
    std::string dup = make_csv(1, 3, loss);
    dup += "C0,1,1988,1,7,2000\n";
    CHECK_THROWS_WITH(load_text(dup, "dup.csv"), Catch::Matchers::ContainsSubstring("duplicate"));
    std::string badlob = make_csv(1, 3, loss);
    badlob += "C0,3,1988,1,7,2000\n";
    CHECK_THROWS_AS(load_text(badlob, "badlob.csv"), ValidationError);
}
