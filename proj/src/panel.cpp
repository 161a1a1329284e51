#include "ivmsm/panel.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ivmsm {

std::vector<std::string> validate(const LongitudinalPanel& p) {
    std::vector<std::string> errs;
    const std::size_t nt = p.n * p.T;
    if (p.a.size() != nt || p.z.size() != nt || p.l.size() != nt * p.k ||
        p.u.size() != nt * p.k_u)
        errs.push_back("ragged subject: storage does not match n*T");
    const std::size_t ylen = p.repeated_y ? nt : p.n;
    if (p.y.size() != ylen) errs.push_back("ragged subject: outcome length mismatch");
    for (double v : p.z)
        if (v != 0.0 && v != 1.0) {
            errs.push_back("instrument not binary");
            break;
        }
    if (p.binary_treatment)
        for (double v : p.a)
            if (v != 0.0 && v != 1.0) {
                errs.push_back("treatment not binary");
                break;
            }
    auto finite = [](const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    if (!finite(p.a) || !finite(p.z) || !finite(p.l) || !finite(p.u) || !finite(p.y))
        errs.push_back("non-finite value");
    return errs;
}

std::vector<double> cumulative_treatment(const LongitudinalPanel& p) {
    std::vector<double> out(p.n, 0.0);
    for (std::size_t i = 0; i < p.n; ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < p.T; ++t) s += p.a_at(i, t);
        out[i] = s;
    }
    return out;
}

double path_sum(const std::vector<double>& path) {
    double s = 0.0;
    for (double v : path) s += v;
    return s;
}

std::vector<double> mean_basis_row(const MsmmSpec& spec, const std::vector<double>& path) {
    if (spec.mean_model == MeanModel::LINEAR_CUMULATIVE || !spec.basis)
        return {1.0, path_sum(path)};
    return spec.basis(path);
}

std::vector<double> design_row(const MsmmSpec& spec, const std::vector<double>& path) {
    if (spec.index) return spec.index(path);
    return mean_basis_row(spec, path);
}

double mean_value(const MsmmSpec& spec, const std::vector<double>& beta,
                  const std::vector<double>& path) {
    const std::vector<double> g = mean_basis_row(spec, path);
    if (g.size() != beta.size()) throw InvalidParams("mean_value: beta/basis dim mismatch");
    double m = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) m += beta[j] * g[j];
    return m;
}

LongitudinalPanel drop_latent(const LongitudinalPanel& p) {
    LongitudinalPanel q = p;
    q.k_u = 0;
    q.u.clear();
    return q;
}

namespace {

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_panel_csv(const LongitudinalPanel& p, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "subject,t,a,z";
    for (std::size_t j = 1; j <= p.k; ++j) f << ",l" << j;
    for (std::size_t j = 1; j <= p.k_u; ++j) f << ",u" << j;
    f << (p.repeated_y ? ",y_t" : ",y") << "\n";
    for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t t = 0; t < p.T; ++t) {
            f << (i + 1) << "," << (t + 1) << "," << fmt17(p.a_at(i, t)) << ","
              << (p.z_at(i, t) != 0.0 ? 1 : 0);
            for (std::size_t j = 0; j < p.k; ++j) f << "," << fmt17(p.l_at(i, t, j));
            for (std::size_t j = 0; j < p.k_u; ++j) f << "," << fmt17(p.u_at(i, t, j));
            if (p.repeated_y)
                f << "," << fmt17(p.y_at(i, t));
            else if (t + 1 == p.T)
                f << "," << fmt17(p.y_terminal(i));
            else
                f << ",";
            f << "\n";
        }
    if (!f) throw IoError("write failed: " + path);
}

LongitudinalPanel read_panel_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty file: " + path);
    const std::vector<std::string> hdr = split_csv(line);
    if (hdr.size() < 5 || hdr[0] != "subject" || hdr[1] != "t" || hdr[2] != "a" ||
        hdr[3] != "z")
        throw IoError("bad header: expected subject,t,a,z,...");
    std::size_t k = 0, k_u = 0;
    std::size_t col = 4;
    while (col < hdr.size() && hdr[col] == "l" + std::to_string(k + 1)) ++k, ++col;
    while (col < hdr.size() && hdr[col] == "u" + std::to_string(k_u + 1)) ++k_u, ++col;
    if (col + 1 != hdr.size() || (hdr[col] != "y" && hdr[col] != "y_t"))
        throw IoError("bad header: expected trailing y or y_t column");
    LongitudinalPanel p;
    p.k = k;
    p.k_u = k_u;
    p.repeated_y = hdr[col] == "y_t";

    long cur_subject = -1;
    std::size_t cur_periods = 0, first_T = 0;
    bool ragged = false;
    std::vector<double> terminal_y;
    auto close_subject = [&]() {
        if (cur_subject < 0) return;
        if (first_T == 0)
            first_T = cur_periods;
        else if (cur_periods != first_T)
            ragged = true;
        ++p.n;
    };
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> c = split_csv(line);
        if (c.size() != hdr.size())
            throw IoError("row " + std::to_string(lineno) + ": wrong column count");
        const long subj = std::strtol(c[0].c_str(), nullptr, 10);
        const long t = std::strtol(c[1].c_str(), nullptr, 10);
        if (subj != cur_subject) {
            close_subject();
            cur_subject = subj;
            cur_periods = 0;
        }
        if (t != (long)cur_periods + 1)
            throw IoError("row " + std::to_string(lineno) + ": periods out of order");
        ++cur_periods;
        p.a.push_back(std::strtod(c[2].c_str(), nullptr));
        p.z.push_back(std::strtod(c[3].c_str(), nullptr));
        for (std::size_t j = 0; j < k; ++j)
            p.l.push_back(std::strtod(c[4 + j].c_str(), nullptr));
        for (std::size_t j = 0; j < k_u; ++j)
            p.u.push_back(std::strtod(c[4 + k + j].c_str(), nullptr));
        const std::string& ys = c.back();
        if (p.repeated_y)
            p.y.push_back(std::strtod(ys.c_str(), nullptr));
        else if (!ys.empty())
            terminal_y.push_back(std::strtod(ys.c_str(), nullptr));
    }
    close_subject();
    p.T = first_T;  // on ragged input the storage/T mismatch is left for validate()
    if (!p.repeated_y) {
        if (terminal_y.size() != p.n && !ragged)
            throw IoError("terminal outcome missing for some subject");
        p.y = std::move(terminal_y);
    }
    for (double v : p.a)
        if (v != 0.0 && v != 1.0) {
            p.binary_treatment = false;
            break;
        }
    return p;
}

}  // namespace ivmsm
