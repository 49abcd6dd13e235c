#pragma once

namespace esi::stats {

// digamma(x) for x > 0
double digamma(double x);

// regularized incomplete beta I_x(a, b), 0 <= x <= 1
double incbeta(double a, double b, double x);

// two-sided tail probability of Student's t with dof degrees of freedom
double student_t_two_sided_p(double t, double dof);

}  // namespace esi::stats
