#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "worldline/cli.hpp"

using namespace worldline;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> data_lines(const std::string& s) {
    std::vector<std::string> lines;
    std::istringstream in(s);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') lines.push_back(line);
    return lines;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

std::string column(const std::string& header, const std::string& row, const std::string& name) {
    const auto h = split(header), r = split(row);
    for (std::size_t i = 0; i < h.size(); ++i)
        if (h[i] == name) return r.at(i);
    return "<missing>";
}

} // namespace

TEST(CliParse, CountsAcceptScientificNotation) {
    EXPECT_EQ(cli::parse_count("1e6", "x"), 1000000u);
    EXPECT_EQ(cli::parse_count("250", "x"), 250u);
    EXPECT_THROW(cli::parse_count("1.5", "x"), ParameterError);
    EXPECT_THROW(cli::parse_count("-3", "x"), ParameterError);
    EXPECT_THROW(cli::parse_count("abc", "x"), ParameterError);
    EXPECT_TRUE(std::isinf(cli::parse_real("inf", "x")));
}

TEST(CliCp, ZeroChiRow) {
    const auto o = run({"cp", "--chi", "0", "--paths", "1e3", "--steps", "100"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(column(lines[0], lines[1], "estimate"), "0");
    EXPECT_EQ(column(lines[0], lines[1], "stderr"), "0");
}

TEST(CliCp, ColumnsAndOracle) {
    const auto o = run({"cp", "--chi", "1", "--order", "0", "--paths", "2e3", "--steps", "200", "--workers", "1"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0], "chi,N,n_paths,method,order,m_or_delta,estimate,stderr,oracle,rel_err,seed,wall_time_s");
    EXPECT_NEAR(std::stod(column(lines[0], lines[1], "oracle")), eta_te(1.0), 1e-15);
    EXPECT_GT(std::stod(column(lines[0], lines[1], "stderr")), 0.0);
    EXPECT_NE(o.out.find("# chi = 1"), std::string::npos);
}

TEST(CliCp, InfiniteChiIsWrittenAsInf) {
    const auto o = run({"cp", "--chi", "inf", "--paths", "200", "--steps", "100"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    EXPECT_EQ(column(lines[0], lines[1], "chi"), "inf");
    const auto js = data_lines(run({"cp", "--chi", "inf", "--paths", "200", "--steps", "100", "--format", "jsonl"}).out);
    EXPECT_EQ(nlohmann::json::parse(js[0])["chi"], "inf");
}

TEST(CliCp, MissingRequiredFlag) {
    const auto o = run({"cp", "--paths", "10"});
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.err.find("--chi"), std::string::npos);
}

TEST(CliCp, InvalidValueIsConfigError) {
    EXPECT_EQ(run({"cp", "--chi", "1", "--paths", "1.5"}).code, 2);
    EXPECT_EQ(run({"cp", "--chi", "1", "--format", "xml", "--paths", "10", "--steps", "10"}).code, 2);
    EXPECT_EQ(run({"cp", "--chi", "1", "--order", "1", "--method", "fd", "--delta", "2"}).code, 2);
}

TEST(CliCp, RerunIsReproducible) {
    const std::vector<std::string> args{"cp", "--chi", "1", "--paths", "3000", "--steps", "100", "--seed", "9"};
    const auto a = data_lines(run(args).out), b = data_lines(run(args).out);
    ASSERT_EQ(a.size(), 2u);
    for (const char* col : {"estimate", "stderr", "rel_err"})
        EXPECT_EQ(column(a[0], a[1], col), column(b[0], b[1], col)) << col;
}

TEST(CliCp, JsonLinesMirrorCsv) {
    const std::vector<std::string> base{"cp", "--chi", "1", "--paths", "2000", "--steps", "100"};
    auto csv = data_lines(run(base).out);
    auto args = base;
    args.insert(args.end(), {"--format", "jsonl"});
    const auto js = data_lines(run(args).out);
    ASSERT_EQ(js.size(), 1u);
    const auto j = nlohmann::json::parse(js[0]);
    const auto cols = split(csv[0]);
    ASSERT_EQ(j.size(), cols.size());
    for (const auto& c : cols) EXPECT_TRUE(j.contains(c)) << c;
    EXPECT_DOUBLE_EQ(j["estimate"].get<double>(), std::stod(column(csv[0], csv[1], "estimate")));
}

TEST(CliPlates, ZeroCouplingRow) {
    const auto o = run({"plates", "--chi-hat", "0", "--paths", "1000", "--steps", "64"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    EXPECT_EQ(column(lines[0], lines[1], "estimate"), "0");
}

TEST(CliPlates, TorqueEmitsThreeComponents) {
    const auto o = run({"plates", "--chi-hat", "1", "--observable", "torque", "--pivot", "0,0,0", "--paths", "3000",
                        "--steps", "64"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(column(lines[0], lines[3], "component"), "z");
    EXPECT_EQ(run({"plates", "--chi-hat", "1", "--pivot", "0,0"}).code, 2);
}

TEST(CliPlates, ForceOracle) {
    const auto o = run({"plates", "--chi-hat", "1", "--observable", "force", "--paths", "2000", "--steps", "64"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    EXPECT_NEAR(std::stod(column(lines[0], lines[1], "oracle")), gamma_te_derivatives(1.0, 1.0, 1), 1e-14);
}

TEST(CliSweep, PointRowsPlusFitRow) {
    const auto o = run({"sweep", "--observable", "energy", "--chi-hat", "1", "--axis", "pa-fraction", "--points",
                        "0.01,0.02,0.03,0.05,0.08,0.1,0.15,0.2", "--paths", "2000", "--steps", "100",
                        "--shared-seed"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto lines = data_lines(o.out);
    ASSERT_EQ(lines.size(), 1u + 8u + 1u);
    EXPECT_EQ(column(lines[0], lines[9], "kind"), "fit");
    EXPECT_EQ(column(lines[0], lines[9], "small_lo"), "0.01");
    EXPECT_EQ(column(lines[0], lines[9], "large_hi"), "0.2");
    EXPECT_NE(o.out.find("# shared_seed = true"), std::string::npos);
}

TEST(CliSweep, SharedSeedGivesCorrelatedPoints) {
    auto est = [](bool shared) {
        std::vector<std::string> args{"sweep", "--observable", "cp", "--chi", "1", "--order", "1", "--axis",
                                      "fd-delta", "--points", "0.05,0.06", "--paths", "2000", "--steps", "100"};
        if (shared) args.push_back("--shared-seed");
        const auto lines = data_lines(run(args).out);
        return std::stod(column(lines[0], lines[2], "estimate")) - std::stod(column(lines[0], lines[1], "estimate"));
    };
    EXPECT_LT(std::fabs(est(true)), std::fabs(est(false)));
}

TEST(CliConfig, FilePrecedence) {
    const std::string path = ::testing::TempDir() + "worldline_cfg.txt";
    {
        std::ofstream f(path);
        f << "# flat config\nchi = 0\npaths = 500\nsteps=50\n";
    }
    const auto from_file = data_lines(run({"cp", "--config", path}).out);
    ASSERT_EQ(from_file.size(), 2u);
    EXPECT_EQ(column(from_file[0], from_file[1], "n_paths"), "500");
    const auto overridden = data_lines(run({"cp", "--config", path, "--paths", "700"}).out);
    EXPECT_EQ(column(overridden[0], overridden[1], "n_paths"), "700");
    EXPECT_EQ(run({"cp", "--config", path + ".missing"}).code, 2);
    std::remove(path.c_str());
}

TEST(CliSelftest, PassesAndDetectsMutation) {
    const auto ok = run({"selftest"});
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
    EXPECT_NE(ok.out.find("ratio="), std::string::npos);
    const auto bad = run({"selftest", "--mutate", "eta-sign"});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("FAIL eta_te"), std::string::npos);
}

TEST(CliMain, NoSubcommandIsConfigError) { EXPECT_EQ(run({}).code, 2); }
