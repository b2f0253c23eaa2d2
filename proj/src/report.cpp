#include "s2ap/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace s2ap {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

json trace_to_json(const MaskTrace& trace) {
    json j;
    j["bit_count"] = trace.bit_count;
    json masks = json::array();
    for (const auto& words : trace.masks) {
        std::string hex;
        hex.reserve(words.size() * 16);
        static const char* digits = "0123456789abcdef";
        for (uint64_t w : words)
            for (int shift = 60; shift >= 0; shift -= 4) hex += digits[(w >> shift) & 0xf];
        masks.push_back(hex);
    }
    j["masks"] = masks;
    return j;
}

MaskTrace trace_from_json(const json& j) {
    MaskTrace trace;
    trace.bit_count = j.at("bit_count").get<int64_t>();
    for (const auto& hex : j.at("masks")) {
        const std::string s = hex.get<std::string>();
        std::vector<uint64_t> words(s.size() / 16, 0);
        for (size_t i = 0; i < s.size(); ++i) {
            const char c = s[i];
            const uint64_t digit =
                c <= '9' ? static_cast<uint64_t>(c - '0') : static_cast<uint64_t>(c - 'a' + 10);
            words[i / 16] = (words[i / 16] << 4) | digit;
        }
        trace.masks.push_back(std::move(words));
    }
    return trace;
}

json seed_to_json(const SeedResult& r) {
    json j;
    j["seed"] = r.seed;
    j["mask_clean_acc"] = r.mask.clean_acc;
    j["mask_robust_acc"] = r.mask.robust_acc;
    j["clean_acc"] = r.final_model.clean_acc;
    j["pgd50_acc"] = r.final_model.robust_acc;
    j["pretrain_epoch_loss"] = r.pretrain_epoch_loss;
    j["prune_epoch_loss"] = r.prune_epoch_loss;
    j["prune_best_loss"] = r.prune_best_loss;
    j["finetune_epoch_loss"] = r.finetune_epoch_loss;
    j["lambda_per_epoch"] = r.lambda_per_epoch;
    j["lambda_flat_events"] = r.lambda_flat_events;
    j["hamming"] = r.hamming;
    json ld = json::object();
    for (const auto& [rho, value] : r.loss_diff) ld[fmt(rho)] = value;
    j["loss_diff"] = ld;
    j["mask_trace"] = trace_to_json(r.trace);
    j["events"] = r.events;
    return j;
}

SeedResult seed_from_json(const json& j) {
    SeedResult r;
    r.seed = j.at("seed").get<uint64_t>();
    r.mask.clean_acc = j.at("mask_clean_acc").get<double>();
    r.mask.robust_acc = j.at("mask_robust_acc").get<double>();
    r.final_model.clean_acc = j.at("clean_acc").get<double>();
    r.final_model.robust_acc = j.at("pgd50_acc").get<double>();
    r.pretrain_epoch_loss = j.at("pretrain_epoch_loss").get<std::vector<double>>();
    r.prune_epoch_loss = j.at("prune_epoch_loss").get<std::vector<double>>();
    r.prune_best_loss = j.at("prune_best_loss").get<double>();
    r.finetune_epoch_loss = j.at("finetune_epoch_loss").get<std::vector<double>>();
    r.lambda_per_epoch = j.at("lambda_per_epoch").get<std::vector<double>>();
    r.lambda_flat_events = j.at("lambda_flat_events").get<std::vector<int>>();
    r.hamming = j.at("hamming").get<std::vector<double>>();
    for (const auto& [key, value] : j.at("loss_diff").items())
        r.loss_diff[std::stod(key)] = value.get<double>();
    r.trace = trace_from_json(j.at("mask_trace"));
    r.events = j.at("events").get<std::vector<std::string>>();
    return r;
}

json aggregate_to_json(const Aggregate& a) { return json{{"mean", a.mean}, {"std", a.stdev}}; }

}  // namespace

std::string results_json(const ExperimentResult& result) {
    json j;
    j["mode"] = result.mode;
    j["config"] = result.config_echo;
    j["clean"] = aggregate_to_json(result.clean);
    j["robust"] = aggregate_to_json(result.robust);
    j["mask_robust"] = aggregate_to_json(result.mask_robust);
    json seeds = json::array();
    for (const auto& s : result.seeds) seeds.push_back(seed_to_json(s));
    j["seeds"] = seeds;
    return j.dump(2) + "\n";
}

ExperimentResult results_from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentResult result;
    result.mode = j.at("mode").get<std::string>();
    result.config_echo = j.at("config").get<std::string>();
    result.clean = {j.at("clean").at("mean").get<double>(), j.at("clean").at("std").get<double>()};
    result.robust = {j.at("robust").at("mean").get<double>(),
                     j.at("robust").at("std").get<double>()};
    result.mask_robust = {j.at("mask_robust").at("mean").get<double>(),
                          j.at("mask_robust").at("std").get<double>()};
    for (const auto& s : j.at("seeds")) result.seeds.push_back(seed_from_json(s));
    return result;
}

std::string csv_text(const std::string& header, const std::vector<std::vector<double>>& rows) {
    std::string out = header + "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += fmt(row[i]);
        }
        out += "\n";
    }
    return out;
}

std::string svg_line_plot(const std::string& title, const std::vector<Series>& series) {
    std::vector<Series> live;
    for (const auto& s : series)
        if (!s.points.empty()) live.push_back(s);
    if (live.empty()) return "";

    double xmin = live[0].points[0].first, xmax = xmin;
    double ymin = live[0].points[0].second, ymax = ymin;
    for (const auto& s : live) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if (ymax == ymin) {
        ymin -= 1.0;
        ymax += 1.0;
    }

    const double width = 640, height = 400;
    const double ml = 60, mr = 20, mt = 40, mb = 40;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml << "\" y=\"" << height - mb + 16
        << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(xmin) << "</text>\n";
    svg << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 16
        << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(xmax) << "</text>\n";
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << height - mb
        << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(ymin) << "</text>\n";
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
        << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(ymax) << "</text>\n";

    for (size_t si = 0; si < live.size(); ++si) {
        const char* color = colors[si % 4];
        const auto& pts = live[si].points;
        if (pts.size() == 1) {
            svg << "<circle cx=\"" << px(pts[0].first) << "\" cy=\"" << py(pts[0].second)
                << "\" r=\"4\" fill=\"" << color << "\"/>\n";
        } else {
            svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : pts) svg << px(x) << "," << py(y) << " ";
            svg << "\"/>\n";
        }
        svg << "<text x=\"" << width - mr - 4 << "\" y=\"" << mt + 14 * (si + 1)
            << "\" font-size=\"11\" text-anchor=\"end\" fill=\"" << color << "\">"
            << live[si].name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ReportError("report: cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ReportError("report: write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ReportError("report: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

namespace {

std::vector<double> mean_series(const std::vector<SeedResult>& seeds,
                                std::vector<double> SeedResult::*member) {
    size_t longest = 0;
    for (const auto& s : seeds) longest = std::max(longest, (s.*member).size());
    std::vector<double> mean(longest, 0.0);
    std::vector<int> count(longest, 0);
    for (const auto& s : seeds) {
        const auto& v = s.*member;
        for (size_t i = 0; i < v.size(); ++i) {
            mean[i] += v[i];
            ++count[i];
        }
    }
    for (size_t i = 0; i < longest; ++i)
        if (count[i] > 0) mean[i] /= count[i];
    return mean;
}

void write_series_svg(const std::string& path, const std::string& title,
                      const std::vector<Series>& series) {
    const std::string svg = svg_line_plot(title, series);
    if (!svg.empty()) write_text_file(path, svg);
}

Series to_series(const std::string& name, const std::vector<double>& values, double x0 = 0.0) {
    Series s;
    s.name = name;
    for (size_t i = 0; i < values.size(); ++i)
        s.points.emplace_back(x0 + static_cast<double>(i), values[i]);
    return s;
}

}  // namespace

void emit_run_artifacts(const ExperimentResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir + "/results.json", results_json(result));
    const std::vector<double> lambda = mean_series(result.seeds, &SeedResult::lambda_per_epoch);
    std::vector<std::vector<double>> rows;
    for (size_t i = 0; i < lambda.size(); ++i)
        rows.push_back({static_cast<double>(i), lambda[i]});
    write_text_file(dir + "/lambda_max.csv", csv_text("epoch,value", rows));
    write_series_svg(dir + "/lambda_max.svg", "lambda_max per epoch",
                     {to_series(result.mode, lambda)});
}

void emit_paired_artifacts(const PairedResult& paired, int warmup_epochs,
                           const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir + "/results_baseline.json", results_json(paired.baseline));
    write_text_file(dir + "/results_s2ap.json", results_json(paired.s2ap));

    const std::vector<double> lambda_orig =
        mean_series(paired.baseline.seeds, &SeedResult::lambda_per_epoch);
    const std::vector<double> lambda_s2ap =
        mean_series(paired.s2ap.seeds, &SeedResult::lambda_per_epoch);
    for (const auto& [name, series] :
         {std::pair{std::string("lambda_max_orig"), lambda_orig},
          std::pair{std::string("lambda_max_s2ap"), lambda_s2ap}}) {
        std::vector<std::vector<double>> rows;
        for (size_t i = 0; i < series.size(); ++i)
            rows.push_back({static_cast<double>(i), series[i]});
        write_text_file(dir + "/" + name + ".csv", csv_text("epoch,value", rows));
    }
    write_series_svg(dir + "/lambda_max.svg", "lambda_max per epoch",
                     {to_series("orig", lambda_orig), to_series("s2ap", lambda_s2ap)});

    // Hamming: epoch,h_orig,h_s2ap,diff (epochs are 1-based distances from m_0).
    const std::vector<double> h_orig = mean_series(paired.baseline.seeds, &SeedResult::hamming);
    const std::vector<double> h_s2ap = mean_series(paired.s2ap.seeds, &SeedResult::hamming);
    std::vector<std::vector<double>> hrows;
    std::vector<double> hdiff;
    const size_t hn = std::min(h_orig.size(), h_s2ap.size());
    for (size_t i = 0; i < hn; ++i) {
        hrows.push_back({static_cast<double>(i + 1), h_orig[i], h_s2ap[i], h_orig[i] - h_s2ap[i]});
        hdiff.push_back(h_orig[i] - h_s2ap[i]);
    }
    write_text_file(dir + "/hamming.csv", csv_text("epoch,h_orig,h_s2ap,diff", hrows));
    write_series_svg(dir + "/hamming.svg", "hamming distance to m_0",
                     {to_series("orig", h_orig, 1.0), to_series("s2ap", h_s2ap, 1.0)});

    // Sharpness grid: rho,orig,s2ap (means over seeds).
    std::map<double, std::pair<double, int>> orig_acc, s2ap_acc;
    for (const auto& s : paired.baseline.seeds)
        for (const auto& [rho, v] : s.loss_diff) {
            orig_acc[rho].first += v;
            orig_acc[rho].second += 1;
        }
    for (const auto& s : paired.s2ap.seeds)
        for (const auto& [rho, v] : s.loss_diff) {
            s2ap_acc[rho].first += v;
            s2ap_acc[rho].second += 1;
        }
    std::vector<std::vector<double>> srows;
    Series s_orig{"orig", {}}, s_s2ap{"s2ap", {}};
    for (const auto& [rho, acc] : orig_acc) {
        if (!s2ap_acc.count(rho)) continue;
        const double vo = acc.first / acc.second;
        const double vs = s2ap_acc[rho].first / s2ap_acc[rho].second;
        srows.push_back({rho, vo, vs});
        s_orig.points.emplace_back(rho, vo);
        s_s2ap.points.emplace_back(rho, vs);
    }
    write_text_file(dir + "/sharpness.csv", csv_text("rho,orig,s2ap", srows));
    write_series_svg(dir + "/sharpness.svg", "loss-difference sharpness", {s_orig, s_s2ap});

    // Compact comparison summary.
    nlohmann::json cmp;
    cmp["mask_robust_baseline_mean"] = paired.baseline.mask_robust.mean;
    cmp["mask_robust_s2ap_mean"] = paired.s2ap.mask_robust.mean;
    int wins = 0;
    nlohmann::json per_seed = nlohmann::json::array();
    const size_t pairs = std::min(paired.baseline.seeds.size(), paired.s2ap.seeds.size());
    for (size_t i = 0; i < pairs; ++i) {
        const double b = paired.baseline.seeds[i].mask.robust_acc;
        const double s = paired.s2ap.seeds[i].mask.robust_acc;
        if (s >= b) ++wins;
        per_seed.push_back({{"seed", paired.baseline.seeds[i].seed},
                            {"baseline", b},
                            {"s2ap", s}});
    }
    cmp["mask_robust_per_seed"] = per_seed;
    cmp["s2ap_wins"] = wins;
    auto post_warmup_mean = [&](const std::vector<double>& v, size_t from) {
        double sum = 0.0;
        int count = 0;
        for (size_t i = from; i < v.size(); ++i) {
            sum += v[i];
            ++count;
        }
        return count ? sum / count : 0.0;
    };
    cmp["lambda_post_warmup_baseline"] =
        post_warmup_mean(lambda_orig, static_cast<size_t>(warmup_epochs));
    cmp["lambda_post_warmup_s2ap"] =
        post_warmup_mean(lambda_s2ap, static_cast<size_t>(warmup_epochs));
    // hamming series is 1-based in epochs: entry t-1 holds h_t.
    cmp["hamming_post_warmup_baseline"] = post_warmup_mean(
        h_orig, warmup_epochs > 0 ? static_cast<size_t>(warmup_epochs - 1) : 0);
    cmp["hamming_post_warmup_s2ap"] = post_warmup_mean(
        h_s2ap, warmup_epochs > 0 ? static_cast<size_t>(warmup_epochs - 1) : 0);
    cmp["hamming_diff"] = hdiff;
    write_text_file(dir + "/compare.json", cmp.dump(2) + "\n");
}

void emit_gamma_sweep(const GammaSweepResult& sweep, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::vector<double>> rows;
    for (const auto& row : sweep.rows) rows.push_back({row.gamma, row.mask_robust_acc});
    write_text_file(dir + "/gamma_sweep.csv", csv_text("gamma,mask_robust_acc", rows));
    nlohmann::json j;
    j["best_gamma"] = sweep.best_gamma;
    write_text_file(dir + "/gamma_best.json", j.dump(2) + "\n");
}

void emit_timings(const StageTimings& timings, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/timings.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw ReportError("report: cannot write " + path);
    if (fresh) out << "stage,seconds\n";
    for (const auto& [stage, seconds] : timings) out << stage << "," << fmt(seconds) << "\n";
}

}  // namespace s2ap
