#pragma once
#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace digeo {

template <class Scalar_, int Rows_ = Eigen::Dynamic, int Cols_ = Eigen::Dynamic>
using colmat_type = Eigen::Matrix<Scalar_, Rows_, Cols_, Eigen::ColMajor>;

template <class Scalar_, int Rows_ = Eigen::Dynamic>
using colvec_type = Eigen::Matrix<Scalar_, Rows_, 1>;

using index_type = Eigen::Index;

// Shape or dimension precondition violated.
class dimension_error : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

// Input outside a function's domain (non-positive probability, bad label, ...).
class domain_error : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

// Training diverged or produced non-finite values.
class numerical_error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Malformed file or document.
class format_error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace digeo
