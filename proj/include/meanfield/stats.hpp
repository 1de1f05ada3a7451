#pragma once

#include <Eigen/Dense>
#include <vector>

namespace meanfield {

double normal_cdf(double z);

// Regularized incomplete gamma functions P(a,x), Q(a,x) = 1 - P(a,x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Upper tail of the chi-square distribution with k degrees of freedom.
double chi_square_sf(double x, double k);

// Asymptotic Kolmogorov distribution Q_KS(lambda) = 2 sum (-1)^{j-1}
// exp(-2 j^2 lambda^2) (upper tail).
double kolmogorov_sf(double lambda);

struct KsResult {
  double statistic = 0.0;  // sup-norm distance D_n
  double p_value = 0.0;    // with the (sqrt(n)+0.12+0.11/sqrt(n)) correction
};

// One-sample KS test of `samples` against a standard normal with the given
// mean and standard deviation.
KsResult ks_test_normal(std::vector<double> samples, double mean = 0.0,
                        double stddev = 1.0);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y = intercept + slope * x.
LineFit fit_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

double sample_mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);  // unbiased

}  // namespace meanfield
