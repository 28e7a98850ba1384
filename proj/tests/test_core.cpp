#include "epi/csv.hpp"
#include "epi/date.hpp"
#include "epi/errors.hpp"
#include "epi/matrix.hpp"
#include "epi/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace epi;

TEST_CASE("Date: ISO round trip and arithmetic") {
    const Date d = Date::parse("2020-03-01");
    CHECK(d.to_string() == "2020-03-01");
    CHECK((d + 30).to_string() == "2020-03-31");
    CHECK((d + 31).to_string() == "2020-04-01");
    CHECK(Date::parse("2020-02-29").to_string() == "2020-02-29");  // leap year
    CHECK((Date::parse("2020-07-22") - Date::parse("2020-03-01")) == 143);
    CHECK(Date::from_ymd(1970, 1, 1).days() == 0);
}

TEST_CASE("Date: rejects malformed input") {
    CHECK_THROWS_AS(Date::parse("2020-3-01"), DataError);
    CHECK_THROWS_AS(Date::parse("2020-13-01"), DataError);
    CHECK_THROWS_AS(Date::parse("2021-02-29"), DataError);
    CHECK_THROWS_AS(Date::parse("garbage"), DataError);
}

TEST_CASE("csv: parse handles quoting and CRLF") {
    const auto t = csv::parse("a,b,c\r\n1,\"x,\"\"y\",3\n4,,6\n");
    REQUIRE(t.header.size() == 3);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == "x,\"y");
    CHECK(t.rows[1][1] == "");
    CHECK(t.column("b") == size_t{1});
    CHECK(!t.column("missing"));
}

TEST_CASE("csv: ragged rows and missing files fail") {
    CHECK_THROWS_AS(csv::parse("a,b\n1\n"), DataError);
    CHECK_THROWS_AS(csv::read_file("/nonexistent/file.csv"), DataError);
}

TEST_CASE("csv: file round trip preserves fields exactly") {
    test_util::TempDir tmp("csv");
    csv::Table t;
    t.header = {"name", "value"};
    t.rows = {{"plain", "1.5"}, {"with,comma", "-2"}, {"with\"quote", "x\ny"}};
    csv::write_file(tmp.file("t.csv"), t);
    const auto back = csv::read_file(tmp.file("t.csv"));
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
}

TEST_CASE("csv: format_double round-trips bit-exactly") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-12, 12));
        const double back = csv::parse_double(csv::format_double(v), "test");
        CHECK(back == v);
    }
    CHECK(csv::format_double(5.0) == "5");
    CHECK_THROWS_AS(csv::format_double(std::numeric_limits<double>::quiet_NaN()), NumericError);
}

TEST_CASE("Rng: identical seeds give identical streams, derive splits them") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

    Rng c(123);
    Rng d1 = c.derive(1), d2 = c.derive(2);
    CHECK(d1.bits() != d2.bits());
    CHECK(Rng(123).derive(1).bits() == Rng(123).derive(1).bits());
}

TEST_CASE("Rng: normal moments are sane") {
    Rng rng(42);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("Matrix: matvec and transpose-accumulate match hand results") {
    Matrix m(2, 3);
    m(0, 0) = 1; m(0, 1) = 2; m(0, 2) = 3;
    m(1, 0) = 4; m(1, 1) = 5; m(1, 2) = 6;
    const std::vector<double> x{1, 0, -1};
    std::vector<double> y(2);
    matvec(m, x, y);
    CHECK(y[0] == -2);
    CHECK(y[1] == -2);

    std::vector<double> back(3, 0.0);
    matvec_transpose_add(m, std::vector<double>{1, 1}, back);
    CHECK(back[0] == 5);
    CHECK(back[1] == 7);
    CHECK(back[2] == 9);
}
