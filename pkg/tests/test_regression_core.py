import math

import numpy as np
import pytest
from scipy import integrate, stats

from tjeffreys.errors import DataValidationError, DomainError, SingularityError
from tjeffreys.objective_priors import PriorSpec, full_prior_log
from tjeffreys.regression_core import (
    Dataset,
    MixingVector,
    augmented_joint_logdensity,
    beta_integrated_logdensity,
    mixing_density_log,
    sigma_integrated_logdensity,
    student_t_loglik,
    weighted_regression,
    weighted_sum_of_squares,
)


def test_ordinary_least_squares():
    dataset = Dataset(y=[1.0, 2.0, 3.0], X=np.ones((3, 1)))
    wls = weighted_regression(dataset, MixingVector.ones(3))
    assert wls.b[0] == pytest.approx(2.0, rel=1e-14)
    assert wls.s2 == pytest.approx(2.0, rel=1e-14)
    assert wls.A[0, 0] == pytest.approx(3.0, rel=1e-14)


def test_weight_scaling(rng, dataset_factory):
    dataset = dataset_factory(9, 3)
    lam = rng.gamma(2.0, 0.5, size=9)
    base = weighted_regression(dataset, lam)
    scaled = weighted_regression(dataset, 7.5 * lam)
    assert np.allclose(scaled.A, 7.5 * base.A, rtol=1e-12)
    assert np.allclose(scaled.b, base.b, rtol=1e-10)
    assert scaled.s2 == pytest.approx(7.5 * base.s2, rel=1e-10)


def test_residual_sum_matches_explicit_inverse(rng, dataset_factory):
    dataset = dataset_factory(6, 2)
    lam = rng.gamma(3.0, 1.0 / 3.0, size=6)
    D = np.diag(lam)
    X, y = dataset.X, dataset.y
    inverse = np.linalg.inv(X.T @ D @ X)
    brute = y @ D @ y - y @ D @ X @ inverse @ X.T @ D @ y
    assert weighted_regression(dataset, lam).s2 == pytest.approx(brute, rel=1e-10)


def test_completed_square_identity(rng, dataset_factory):
    for _ in range(1000):
        p = int(rng.integers(1, 5))
        n = int(rng.integers(p + 1, 13))
        dataset = dataset_factory(n, p)
        lam = rng.gamma(1.5, 1.0, size=n)
        beta = rng.normal(0.0, 3.0, size=p)
        wls = weighted_regression(dataset, lam)
        direct = weighted_sum_of_squares(beta, dataset, lam)
        assert wls.quadratic_form(beta) + wls.s2 == pytest.approx(direct, rel=1e-10)
        assert wls.s2 > 0
        assert wls.quadratic_form(wls.b) == pytest.approx(0.0, abs=1e-20 + 1e-12 * direct)


def test_exact_fit_has_zero_residual():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    dataset = Dataset(y=1.0 + 2.0 * x, X=np.column_stack([np.ones(4), x]))
    assert weighted_regression(dataset, MixingVector.ones(4)).s2 == 0.0


def test_weighted_design_singularity():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    dataset = Dataset(y=[1.0, 2.0, 3.0], X=X)
    with pytest.raises(SingularityError):
        weighted_regression(dataset, [1e-300, 1.0, 1.0])


def test_weight_length_checked(small_dataset):
    with pytest.raises(DomainError):
        weighted_regression(small_dataset, np.ones(3))


def test_cauchy_mode():
    dataset = Dataset(y=[0.7, 0.7], X=np.ones((2, 1)))
    assert student_t_loglik(np.array([0.7]), 1.0, 1.0, dataset) == pytest.approx(2.0 * math.log(1.0 / math.pi), rel=1e-14)


def test_normal_limit(small_dataset):
    beta = np.array([1.1, 0.9])
    sigma2 = 1.7
    z = (small_dataset.y - small_dataset.X @ beta) / math.sqrt(sigma2)
    normal = np.sum(stats.norm.logpdf(z)) - 0.5 * small_dataset.n * math.log(sigma2)
    assert student_t_loglik(beta, sigma2, 1e6, small_dataset) == pytest.approx(normal, abs=1e-4)


def test_rescaling_invariance(small_dataset):
    beta = np.array([0.8, 1.3])
    c = 3.7
    scaled = Dataset(y=c * small_dataset.y, X=small_dataset.X)
    base = student_t_loglik(beta, 0.6, 4.0, small_dataset)
    rescaled = student_t_loglik(c * beta, c * c * 0.6, 4.0, scaled)
    assert rescaled == pytest.approx(base - small_dataset.n * math.log(c), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("nu", [0.7, 3.0, 25.0])
def test_loglik_matches_scale_mixture(nu):
    dataset = Dataset(y=[0.4, -2.1, 5.0], X=[[1.0, 0.5], [1.0, -1.0], [1.0, 2.0]])
    beta = np.array([0.2, 1.1])
    sigma2 = 1.7
    mu = dataset.X @ beta

    total = 0.0
    for y_i, mu_i in zip(dataset.y, mu):

        def integrand(lam):
            normal = stats.norm.pdf(y_i, loc=mu_i, scale=math.sqrt(sigma2 / lam))
            return normal * math.exp(mixing_density_log(lam, nu))

        total += math.log(_split_integral(integrand))
    assert student_t_loglik(beta, sigma2, nu, dataset) == pytest.approx(total, rel=1e-8)


def test_loglik_domain(small_dataset):
    with pytest.raises(DomainError):
        student_t_loglik(np.zeros(2), 0.0, 3.0, small_dataset)
    with pytest.raises(DomainError):
        student_t_loglik(np.zeros(2), 1.0, -3.0, small_dataset)


def test_mixing_density_exponential():
    lam = np.array([0.1, 1.0, 4.5])
    assert np.allclose(mixing_density_log(lam, 2.0), -lam, rtol=1e-14, atol=1e-15)
    assert mixing_density_log(1.0, 2.0) == pytest.approx(-1.0, rel=1e-14)


def _split_integral(f):
    lower, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    upper, _ = integrate.quad(f, 1.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return lower + upper


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0, 4.0, 50.0])
def test_mixing_density_normalized(nu):
    mass = _split_integral(lambda lam: math.exp(mixing_density_log(lam, nu)))
    mean = _split_integral(lambda lam: lam * math.exp(mixing_density_log(lam, nu)))
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert mean == pytest.approx(1.0, rel=1e-8)


def test_mixing_density_domain():
    with pytest.raises(DomainError):
        mixing_density_log(1.0, 0.0)
    with pytest.raises(DomainError):
        mixing_density_log(np.array([1.0, -1.0]), 2.0)


def test_augmented_density_integrates_to_likelihood():
    dataset = Dataset(y=[0.3, -1.2, 2.5], X=np.ones((3, 1)))
    spec = PriorSpec.independence(p=1)
    beta, sigma2, nu = np.array([0.4]), 0.8, 3.5
    lam0 = np.ones(3)
    reference = augmented_joint_logdensity(beta, sigma2, nu, lam0, dataset, spec)

    # the λ integral factorizes over observations
    total = reference
    for i in range(3):

        def integrand(lam_i):
            lam = lam0.copy()
            lam[i] = lam_i
            return math.exp(augmented_joint_logdensity(beta, sigma2, nu, lam, dataset, spec) - reference)

        value, _ = integrate.quad(integrand, 0.0, 200.0, epsabs=0.0, epsrel=1e-12, limit=200)
        total += math.log(value)

    expected = student_t_loglik(beta, sigma2, nu, dataset) + full_prior_log(beta, sigma2, nu, spec)
    assert total == pytest.approx(expected, rel=1e-6)


def test_augmented_density_at_weighted_estimate(rng, dataset_factory):
    dataset = dataset_factory(7, 2)
    spec = PriorSpec.independence(p=2)
    lam = rng.gamma(2.0, 0.5, size=7)
    wls = weighted_regression(dataset, lam)
    sigma2, nu = 1.3, 6.0
    value = augmented_joint_logdensity(wls.b, sigma2, nu, lam, dataset, spec)
    expected = (
        0.5 * np.sum(np.log(lam))
        - 3.5 * math.log(2.0 * math.pi * sigma2)
        - wls.s2 / (2.0 * sigma2)
        + full_prior_log(wls.b, sigma2, nu, spec)
        + np.sum(mixing_density_log(lam, nu))
    )
    assert value == pytest.approx(expected, rel=1e-12)


def test_augmented_density_permutation_invariant(rng, dataset_factory):
    dataset = dataset_factory(8, 3)
    spec = PriorSpec.jeffreys_rule(p=3)
    lam = rng.gamma(2.0, 0.5, size=8)
    beta = rng.normal(size=3)
    order = rng.permutation(8)
    permuted = Dataset(y=dataset.y[order], X=dataset.X[order])
    value = augmented_joint_logdensity(beta, 0.9, 2.5, lam, dataset, spec)
    shuffled = augmented_joint_logdensity(beta, 0.9, 2.5, lam[order], permuted, spec)
    assert shuffled == pytest.approx(value, rel=1e-12)


def test_beta_integration_matches_quadrature(rng, dataset_factory):
    dataset = dataset_factory(5, 1)
    spec = PriorSpec.independence(p=1)
    lam = rng.gamma(2.0, 0.5, size=5)
    sigma2, nu = 0.7, 3.0
    wls = weighted_regression(dataset, lam)
    reference = augmented_joint_logdensity(wls.b, sigma2, nu, lam, dataset, spec)
    half_width = 40.0 * math.sqrt(sigma2 / wls.A[0, 0])

    value, _ = integrate.quad(
        lambda b: math.exp(augmented_joint_logdensity(np.array([b]), sigma2, nu, lam, dataset, spec) - reference),
        wls.b[0] - half_width,
        wls.b[0] + half_width,
        epsabs=0.0,
        epsrel=1e-11,
        points=[wls.b[0]],
    )
    expected = beta_integrated_logdensity(sigma2, nu, lam, dataset, spec)
    assert reference + math.log(value) == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("prior", ["independence", "jeffreys-rule"])
def test_sigma_integration_matches_quadrature(rng, dataset_factory, prior):
    dataset = dataset_factory(6, 2)
    spec = PriorSpec.factory(prior, 2)
    lam = rng.gamma(2.0, 0.5, size=6)
    nu = 2.0
    wls = weighted_regression(dataset, lam)
    mode = wls.s2 / (dataset.n - dataset.p + 2.0 * spec.a)
    reference = beta_integrated_logdensity(mode, nu, lam, dataset, spec)

    def integrand(log_sigma2):
        sigma2 = math.exp(log_sigma2)
        return sigma2 * math.exp(beta_integrated_logdensity(sigma2, nu, lam, dataset, spec) - reference)

    center = math.log(mode)
    value, _ = integrate.quad(integrand, center - 30.0, center + 30.0, epsabs=0.0, epsrel=1e-11, limit=200)
    expected = sigma_integrated_logdensity(nu, lam, dataset, spec)
    assert reference + math.log(value) == pytest.approx(expected, rel=1e-8)


def test_sigma_integration_diverges():
    dataset = Dataset(y=[0.1, 1.5, -0.4], X=np.array([[1.0, 0.2], [1.0, -1.0], [1.0, 0.7]]))
    spec = PriorSpec.custom(p=2, a=0.4, nu_log_density=lambda nu: 0.0)
    with pytest.raises(DomainError):
        sigma_integrated_logdensity(1.0, np.ones(3), dataset, spec)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(y=[1.0, 2.0], X=np.ones((2, 2)))
    with pytest.raises(ValueError):
        Dataset(y=[1.0, 2.0, 3.0], X=np.column_stack([np.ones(3), np.ones(3)]))
    with pytest.raises(ValueError):
        Dataset(y=[1.0, 2.0], X=np.ones((3, 1)))
    with pytest.raises(ValueError):
        Dataset(y=[1.0, np.nan, 3.0], X=np.ones((3, 1)))


def test_dataset_is_immutable(small_dataset):
    assert small_dataset.n == 12
    assert small_dataset.p == 2
    assert small_dataset.columns == ("x1", "x2")
    with pytest.raises(ValueError):
        small_dataset.y[0] = 5.0


def test_dataset_from_csv(fixture_csv):
    with_intercept = Dataset.from_csv(fixture_csv, intercept=True)
    assert (with_intercept.n, with_intercept.p) == (30, 2)
    assert with_intercept.columns == ("intercept", "x")
    assert np.all(with_intercept.X[:, 0] == 1.0)

    plain = Dataset.from_csv(fixture_csv)
    assert plain.p == 1
    assert np.array_equal(plain.X[:, 0], with_intercept.X[:, 1])
    assert list(plain.to_frame().columns) == ["y", "x"]


def test_dataset_csv_is_exact(tmp_path, small_dataset):
    path = tmp_path / "data.csv"
    small_dataset.to_frame().to_csv(path, index=False, float_format="%.17g")
    loaded = Dataset.from_csv(path)
    assert np.array_equal(loaded.y, small_dataset.y)
    assert np.array_equal(loaded.X, small_dataset.X)


@pytest.mark.parametrize(
    "content",
    ["a,x\n1,2\n3,4\n5,6\n", "y,x\n1,a\n3,b\n5,c\n", "y\n1\n2\n3\n"],
)
def test_dataset_from_csv_invalid(tmp_path, content):
    path = tmp_path / "data.csv"
    path.write_text(content)
    with pytest.raises(DataValidationError):
        Dataset.from_csv(path)


def test_mixing_vector():
    assert len(MixingVector.ones(4)) == 4
    with pytest.raises(ValueError):
        MixingVector(values=[1.0, 0.0])
    with pytest.raises(ValueError):
        MixingVector(values=[1.0, np.inf])
