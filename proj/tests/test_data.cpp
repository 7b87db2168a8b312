#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "maestro/data.hpp"
#include "maestro/rng.hpp"

using namespace maestro;

namespace {

const std::map<std::string, Modality> kSchema = {{"ili", Modality::Surveillance},
                                                 {"search", Modality::Trends},
                                                 {"temp", Modality::Weather}};

std::string write_temp_csv(const std::string& name, const std::string& content) {
    const std::string path = "/tmp/maestro_test_" + name + ".csv";
    std::ofstream out(path);
    out << content;
    return path;
}

TimeSeriesFrame ramp_frame(std::size_t T) {
    TimeSeriesFrame f;
    f.target_column = "ili";
    f.channel_names = {"ili", "search"};
    f.modality_of = {{"ili", Modality::Surveillance}, {"search", Modality::Trends}};
    f.channels.resize(2);
    for (std::size_t t = 0; t < T; ++t) {
        f.timestamps.push_back(static_cast<std::int64_t>(t));
        f.timestamp_text.push_back(std::to_string(t));
        f.channels[0].push_back(static_cast<double>(t + 1));
        f.channels[1].push_back(10.0 * static_cast<double>(t));
    }
    return f;
}

} // namespace

TEST_CASE("ingest_csv parses a small file") {
    const auto path = write_temp_csv("basic",
                                     "date,ili,search,temp\n"
                                     "2024-01-01,1.5,10,20\n"
                                     "2024-01-08,2.5,11,21\n"
                                     "2024-01-15,3.5,12,22\n");
    TimeSeriesFrame f = ingest_csv(path, kSchema, "ili");
    CHECK(f.length() == 3);
    CHECK(f.num_channels() == 3);
    CHECK(f.channel("ili")[2] == 3.5);
    CHECK(f.timestamps[1] - f.timestamps[0] == 7); // weekly cadence in days
}

TEST_CASE("ingest_csv forward-fills missing cells") {
    const auto path = write_temp_csv("fill",
                                     "date,ili,search,temp\n"
                                     "1,1.0,10,20\n"
                                     "2,,11,21\n"
                                     "3,3.0,12,22\n");
    IngestReport rep;
    TimeSeriesFrame f = ingest_csv(path, kSchema, "ili", {}, &rep);
    CHECK(f.channel("ili")[1] == 1.0); // copied from the previous row
    CHECK(rep.cells_filled == 1);

    IngestOptions drop;
    drop.missing = MissingPolicy::Drop;
    TimeSeriesFrame fd = ingest_csv(path, kSchema, "ili", drop, &rep);
    CHECK(fd.length() == 2);
    CHECK(rep.rows_dropped == 1);
}

TEST_CASE("ingest_csv error cases") {
    SUBCASE("non-monotonic dates name the row") {
        const auto path = write_temp_csv("mono",
                                         "date,ili,search,temp\n"
                                         "5,1,2,3\n"
                                         "4,1,2,3\n");
        CHECK_THROWS_WITH_AS(ingest_csv(path, kSchema, "ili"), doctest::Contains("row 1"),
                             DataError);
    }
    SUBCASE("non-numeric cell") {
        const auto path = write_temp_csv("nonnum",
                                         "date,ili,search,temp\n"
                                         "1,abc,2,3\n"
                                         "2,1,2,3\n");
        CHECK_THROWS_WITH_AS(ingest_csv(path, kSchema, "ili"), doctest::Contains("non-numeric"),
                             DataError);
    }
    SUBCASE("missing declared column") {
        const auto path = write_temp_csv("missing", "date,ili,search\n1,1,2\n2,1,2\n");
        CHECK_THROWS_WITH_AS(ingest_csv(path, kSchema, "ili"), doctest::Contains("temp"),
                             DataError);
    }
    SUBCASE("fewer than two rows") {
        const auto path = write_temp_csv("short", "date,ili,search,temp\n1,1,2,3\n");
        CHECK_THROWS_AS(ingest_csv(path, kSchema, "ili"), DataError);
    }
}

TEST_CASE("chronological split lengths and reconstruction") {
    SUBCASE("T=100 gives 60/20/20") {
        TimeSeriesFrame f = ramp_frame(100);
        SplitFrames s = chronological_split(f, 0.6, 0.2, 0.2, 2);
        CHECK(s.train.length() == 60);
        CHECK(s.val.length() == 20);
        CHECK(s.test.length() == 20);
        // concatenation restores the original exactly
        std::vector<double> rebuilt;
        for (const auto* part : {&s.train, &s.val, &s.test})
            for (double v : part->channel("ili")) rebuilt.push_back(v);
        CHECK(rebuilt == f.channel("ili"));
    }
    SUBCASE("T=10 gives 6/2/2") {
        TimeSeriesFrame f = ramp_frame(10);
        SplitFrames s = chronological_split(f, 0.6, 0.2, 0.2, 2);
        CHECK(s.train.length() == 6);
        CHECK(s.val.length() == 2);
        CHECK(s.test.length() == 2);
    }
    SUBCASE("partition shorter than the window is rejected") {
        TimeSeriesFrame f = ramp_frame(10);
        CHECK_THROWS_AS(chronological_split(f, 0.6, 0.2, 0.2, 31), DataError);
    }
    SUBCASE("fractions validated") {
        TimeSeriesFrame f = ramp_frame(10);
        CHECK_THROWS_AS(chronological_split(f, 0.5, 0.2, 0.2, 1), UsageError);
        CHECK_THROWS_AS(chronological_split(f, -0.2, 0.6, 0.6, 1), UsageError);
    }
}

TEST_CASE("make_windows counts and contents") {
    TimeSeriesFrame f = ramp_frame(10);
    SUBCASE("T=10 L=3 H=1 gives 7 windows") {
        WindowBatch w = make_windows(f, 3, 1);
        CHECK(w.inputs.dim(0) == 7);
        // ramp 1..10: window 0 inputs are 1,2,3 and the target is 4
        CHECK(w.inputs.at3(0, 0, 0) == 1.0);
        CHECK(w.inputs.at3(0, 1, 0) == 2.0);
        CHECK(w.inputs.at3(0, 2, 0) == 3.0);
        CHECK(w.targets.at2(0, 0) == 4.0);
    }
    SUBCASE("T=31 L=30 H=1 gives exactly one window") {
        WindowBatch w = make_windows(ramp_frame(31), 30, 1);
        CHECK(w.inputs.dim(0) == 1);
    }
    SUBCASE("too-short series rejected") {
        CHECK_THROWS_AS(make_windows(f, 30, 1), DataError);
    }
    SUBCASE("target exclusion drops the channel") {
        WindowBatch w = make_windows(f, 3, 1, 1, false);
        CHECK(w.inputs.dim(2) == 1);
        CHECK(w.input_channel_names == std::vector<std::string>{"search"});
    }
}

TEST_CASE("window leakage audit") {
    CHECK(audit_no_leakage(60, 20, 20, 5, 1, 1));
    CHECK(audit_no_leakage(6, 2, 2, 3, 1, 1));
}

TEST_CASE("normalization statistics") {
    SUBCASE("population stats on a 3-point channel") {
        NormStats st = fit_norm_series({{1.0, 2.0, 3.0}}, {"x"});
        CHECK(st.mean[0] == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(st.stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
        Tensor x = Tensor::from({3, 1}, {1, 2, 3});
        Tensor n = apply_norm(x, st);
        CHECK(n[0] == doctest::Approx(-1.224744871391589).epsilon(1e-9));
        CHECK(n[1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(n[2] == doctest::Approx(1.224744871391589).epsilon(1e-9));
    }
    SUBCASE("constant channel floors the std") {
        NormStats st = fit_norm_series({{5.0, 5.0, 5.0}}, {"c"});
        CHECK(st.stddev[0] == NormStats::kStdFloor);
        CHECK(st.floored[0]);
        Tensor x = Tensor::from({3, 1}, {5, 5, 5});
        Tensor n = apply_norm(x, st);
        for (double v : n.data) CHECK(v == 0.0);
    }
    SUBCASE("round trip is identity within 1e-12") {
        Rng rng(9, "norm.roundtrip");
        Tensor x = Tensor::zeros({4, 6, 3});
        for (double& v : x.data) v = 100.0 * rng.gaussian() + 50.0;
        NormStats st = fit_norm(x, {"a", "b", "c"});
        Tensor back = invert_norm(apply_norm(x, st), st);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(std::abs(back[i] - x[i]) < 1e-12 * std::max(1.0, std::abs(x[i])));
    }
    SUBCASE("train partition normalizes to mean 0 std 1") {
        Rng rng(10, "norm.trainstats");
        Tensor x = Tensor::zeros({8, 5, 2});
        for (double& v : x.data) v = 3.0 * rng.gaussian() + 7.0;
        NormStats st = fit_norm(x, {"a", "b"});
        Tensor n = apply_norm(x, st);
        for (std::size_t d = 0; d < 2; ++d) {
            double mu = 0.0, var = 0.0;
            const std::size_t cnt = 8 * 5;
            for (std::size_t b = 0; b < 8; ++b)
                for (std::size_t t = 0; t < 5; ++t) mu += n.at3(b, t, d);
            mu /= static_cast<double>(cnt);
            for (std::size_t b = 0; b < 8; ++b)
                for (std::size_t t = 0; t < 5; ++t)
                    var += (n.at3(b, t, d) - mu) * (n.at3(b, t, d) - mu);
            var /= static_cast<double>(cnt);
            CHECK(std::abs(mu) < 1e-10);
            CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
        }
    }
}
