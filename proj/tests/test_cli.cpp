#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = HCTHMM_CLI_PATH;
const std::string kData = HCTHMM_TEST_DATA;

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "hcthmm_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run run(const std::string& args) {
    const fs::path out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
    const std::string cmd = "'" + kCli + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

json error_of(const Run& r) {
    const json doc = json::parse(r.err);
    CHECK(doc["schema_version"] == 1);
    return doc["error"];
}

}  // namespace

TEST_CASE("help and version") {
    CHECK(run("--help").code == 0);
    const Run v = run("--version");
    CHECK(v.code == 0);
    CHECK(v.out.find("hcthmm") != std::string::npos);
}

TEST_CASE("usage errors exit with 2 and a JSON error") {
    const std::vector<std::string> cases{"", "fit --input " + kData + "/toy.csv",
                                         "fit --output x --input " + kData + "/toy.csv --hierarchy V",
                                         "fit --output x --input /nonexistent.csv", "frobnicate"};
    for (const std::string& args : cases) {
        const Run r = run(args);
        CHECK(r.code == 2);
        CHECK(error_of(r)["type"] == "usage");
    }
}

TEST_CASE("config errors carry the field path") {
    const fs::path cfg = scratch() / "bad.json";
    std::ofstream(cfg) << R"({"schema_version": 1, "fit": {"rho": "high"}})";
    const Run r = run("fit --config " + cfg.string() + " --input " + kData + "/toy.csv --output " + (scratch() / "o").string());
    CHECK(r.code == 1);
    const json e = error_of(r);
    CHECK(e["type"] == "config");
    CHECK(e["path"] == "config.fit.rho");
}

TEST_CASE("input errors carry the line number") {
    const fs::path csv = scratch() / "bad.csv";
    std::ofstream(csv) << "subject_id,minute,count,age,sex,weekend\na,0,3,30,M,0\na,1,three,30,M,0\n";
    const Run r = run("preprocess --input " + csv.string() + " --output " + (scratch() / "p").string());
    CHECK(r.code == 1);
    const json e = error_of(r);
    CHECK(e["type"] == "input");
    CHECK(e["line"] == 3);
}

TEST_CASE("custom hierarchy without levels is a config error") {
    const Run r = run("fit --hierarchy custom --input " + kData + "/toy.csv --output " + (scratch() / "c").string());
    CHECK(r.code == 1);
    CHECK(error_of(r)["path"] == "--hierarchy");
}

TEST_CASE("simulate then fit") {
    const fs::path sim = scratch() / "sim";
    const fs::path cfg = scratch() / "sim.json";
    std::ofstream(cfg) << R"({"schema_version": 1, "simulate": {"n_subjects": 4, "min_length": 200, "max_length": 300}})";
    const Run s = run("simulate --config " + cfg.string() + " --seed 7 --output " + sim.string());
    REQUIRE(s.code == 0);
    CHECK(json::parse(s.out)["subjects"] == 4);
    CHECK(fs::exists(sim / "cohort.csv"));
    CHECK(json::parse(slurp(sim / "truth.json"))["schema_version"] == 1);

    const Run f = run("fit --input " + (sim / "cohort.csv").string() + " --states 2 --hierarchy II --workers 1 --output " +
                      (scratch() / "fit").string());
    REQUIRE(f.code == 0);
    const json summary = json::parse(f.out);
    CHECK(summary["command"] == "fit");
    CHECK(summary["converged"] == true);
    const json fit = json::parse(slurp(scratch() / "fit" / "fit.json"));
    CHECK(fit["states"] == 2);
    CHECK(fit["hierarchy"]["name"] == "II");
}
