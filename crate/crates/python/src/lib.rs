//! Python module `shapval`. Exact values are returned as `fractions.Fraction`
//! and counts as Python integers.

use num_bigint::BigInt;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use shapval_core::analyzer::classify as classify_query;
use shapval_core::counting::{fgmc_vector as core_fgmc_vector, pqe as core_pqe, Config};
use shapval_core::dbformat::{parse_fact, parse_fact_list, DatabaseFile};
use shapval_core::error::Error;
use shapval_core::query::{parse_query, Query as CoreQuery};
use shapval_core::rational::{parse_rational, Rational};
use shapval_core::reduction::{fgmc_via_shapley, Mode, Options};
use shapval_core::relational::{Constant, Fact, PartitionedDatabase};
use shapval_core::shapley::{
    max_shapley as core_max_shapley, shapley_all as core_shapley_all, shapley_constants as core_shapley_constants,
    shapley_subsets, ConstantPartition, QueryGame,
};
use shapval_core::verify::{verify as core_verify, VerifyOptions};

create_exception!(shapval, ShapvalError, PyValueError, "Invalid input.");
create_exception!(shapval, LimitError, ShapvalError, "Budget, hypothesis or construction failure.");

fn err(e: Error) -> PyErr {
    if e.is_limit() {
        LimitError::new_err(e.to_string())
    } else {
        ShapvalError::new_err(e.to_string())
    }
}

fn bad(e: impl std::fmt::Display) -> PyErr {
    ShapvalError::new_err(e.to_string())
}

fn fraction<'py>(py: Python<'py>, r: &Rational) -> PyResult<Bound<'py, PyAny>> {
    let cls = py.import("fractions")?.getattr("Fraction")?;
    cls.call1((r.numer().clone(), r.denom().clone()))
}

fn to_rational(v: &Bound<'_, PyAny>) -> PyResult<Rational> {
    if let Ok(s) = v.extract::<String>() {
        return parse_rational(&s).map_err(bad);
    }
    let num: BigInt = v.getattr("numerator")?.extract()?;
    let den: BigInt = v.getattr("denominator")?.extract()?;
    if den == BigInt::from(0) {
        return Err(bad("zero denominator"));
    }
    Ok(Rational::new(num, den))
}

/// A Boolean query: CQ, UCQ, RPQ, CRPQ or a union of CRPQs.
#[pyclass(frozen, module = "shapval")]
struct Query {
    inner: CoreQuery,
}

#[pymethods]
impl Query {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Query {
            inner: parse_query(text).map_err(bad)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    fn constants(&self) -> Vec<String> {
        self.inner.constants().iter().map(|c| c.to_string()).collect()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Query({:?})", self.inner.to_string())
    }
}

/// A partitioned database read from the text format (`!` marks exogenous facts).
#[pyclass(frozen, module = "shapval")]
struct Database {
    file: DatabaseFile,
    inner: PartitionedDatabase,
}

#[pymethods]
impl Database {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let file = DatabaseFile::parse(text).map_err(bad)?;
        let inner = file.partitioned().map_err(bad)?;
        Ok(Database { file, inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(bad)?;
        Self::new(&text)
    }

    /// Reads a database written by a reduction trace, which may use the
    /// reserved prefix for fresh constants.
    #[staticmethod]
    fn from_trace(text: &str) -> PyResult<Self> {
        let file = DatabaseFile::parse_trace(text).map_err(bad)?;
        let inner = file.partitioned().map_err(bad)?;
        Ok(Database { file, inner })
    }

    fn endogenous(&self) -> Vec<String> {
        self.inner.endo().iter().map(|f| f.to_string()).collect()
    }

    fn exogenous(&self) -> Vec<String> {
        self.inner.exo().iter().map(|f| f.to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.endo().len() + self.inner.exo().len()
    }

    fn __str__(&self) -> String {
        self.inner.to_text()
    }
}

fn config(budget: Option<u64>) -> Config {
    budget.map(Config::with_budget).unwrap_or_default()
}

fn endogenous(db: &Database, fact: &str) -> PyResult<Fact> {
    // Matching on the rendering also accepts fresh constants from traces.
    let wanted = match parse_fact(fact) {
        Ok(f) => f.to_string(),
        Err(_) => fact.split_whitespace().collect(),
    };
    db.inner
        .endo()
        .iter()
        .find(|f| f.to_string() == wanted)
        .cloned()
        .ok_or_else(|| bad(format!("{fact} is not an endogenous fact")))
}

/// Shapley value of an endogenous fact.
#[pyfunction]
#[pyo3(signature = (query, db, fact, budget=None))]
fn shapley<'py>(py: Python<'py>, query: &Query, db: &Database, fact: &str, budget: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let f = endogenous(db, fact)?;
    let g = QueryGame::new(query.inner.clone(), db.inner.clone());
    let v = py.detach(|| shapley_subsets(&g, &f, &config(budget))).map_err(err)?;
    fraction(py, &v)
}

/// Shapley values of every endogenous fact, keyed by fact text.
#[pyfunction]
#[pyo3(signature = (query, db, budget=None))]
fn shapley_all<'py>(py: Python<'py>, query: &Query, db: &Database, budget: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let g = QueryGame::new(query.inner.clone(), db.inner.clone());
    let values = py.detach(|| core_shapley_all(&g, &config(budget))).map_err(err)?;
    let out = PyDict::new(py);
    for (f, v) in values {
        out.set_item(f.to_string(), fraction(py, &v)?)?;
    }
    Ok(out)
}

/// `(fact, value)` of maximum Shapley value.
#[pyfunction]
#[pyo3(signature = (query, db, budget=None))]
fn max_shapley<'py>(py: Python<'py>, query: &Query, db: &Database, budget: Option<u64>) -> PyResult<(String, Bound<'py, PyAny>)> {
    let g = QueryGame::new(query.inner.clone(), db.inner.clone());
    let (f, v) = py.detach(|| core_max_shapley(&g, &config(budget))).map_err(err)?;
    Ok((f.to_string(), fraction(py, &v)?))
}

/// Shapley value of a constant when `players` are the endogenous constants.
#[pyfunction]
#[pyo3(signature = (query, db, players, constant, budget=None))]
fn shapley_constants<'py>(
    py: Python<'py>,
    query: &Query,
    db: &Database,
    players: Vec<String>,
    constant: &str,
    budget: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let facts = db.inner.all_facts();
    let cp = ConstantPartition::for_database(&facts, players.iter().map(Constant::new).collect());
    let v = core_shapley_constants(&query.inner, &facts, &cp, &Constant::new(constant), &config(budget)).map_err(err)?;
    fraction(py, &v)
}

/// Number of endogenous subsets of each size that satisfy the query together
/// with the exogenous facts.
#[pyfunction]
#[pyo3(signature = (query, db, budget=None))]
fn fgmc_vector(py: Python<'_>, query: &Query, db: &Database, budget: Option<u64>) -> PyResult<Vec<num_bigint::BigUint>> {
    Ok(py.detach(|| core_fgmc_vector(&query.inner, &db.inner, &config(budget))).map_err(err)?.0)
}

/// Total number of satisfying endogenous subsets.
#[pyfunction]
#[pyo3(signature = (query, db, budget=None))]
fn gmc(py: Python<'_>, query: &Query, db: &Database, budget: Option<u64>) -> PyResult<num_bigint::BigUint> {
    Ok(py.detach(|| core_fgmc_vector(&query.inner, &db.inner, &config(budget))).map_err(err)?.total())
}

/// Query probability. Facts without an annotation take probability `p`.
#[pyfunction]
#[pyo3(signature = (query, db, p=None, budget=None))]
fn pqe<'py>(py: Python<'py>, query: &Query, db: &Database, p: Option<&Bound<'py, PyAny>>, budget: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let p = p.map(to_rational).transpose()?;
    let pd = db.file.probabilistic(p.as_ref()).map_err(bad)?;
    let v = core_pqe(&query.inner, &pd, &config(budget)).map_err(err)?;
    fraction(py, &v)
}

/// Classification verdict as a dict with keys `verdict`, `rule`, `witness`
/// and `equivalences`.
#[pyfunction]
fn classify<'py>(py: Python<'py>, query: &Query) -> PyResult<Bound<'py, PyAny>> {
    let v = classify_query(&query.inner).map_err(err)?;
    py.import("json")?.call_method1("loads", (v.to_json().to_string(),))
}

/// Count vector obtained through a Shapley reduction. `oracle(query, db, fact)`
/// receives a `Query`, a `Database` and the fact text and must return the
/// Shapley value; by default the built-in solver answers.
#[pyfunction]
#[pyo3(signature = (query, db, mode, q_prime=None, s_prime=None, endogenous_only=false, experimental=false, oracle=None))]
#[allow(clippy::too_many_arguments)]
fn reduce(
    query: &Query,
    db: &Database,
    mode: &str,
    q_prime: Option<&str>,
    s_prime: Option<&str>,
    endogenous_only: bool,
    experimental: bool,
    oracle: Option<Bound<'_, PyAny>>,
) -> PyResult<Vec<num_bigint::BigUint>> {
    let mode = match mode {
        "pseudo-connected" => Mode::PseudoConnected,
        "decomposable" => Mode::Decomposable,
        "leak" => {
            let (Some(qp), Some(sp)) = (q_prime, s_prime) else {
                return Err(bad("leak mode needs q_prime and s_prime"));
            };
            Mode::Leak {
                q_prime: parse_query(qp).map_err(bad)?,
                s_prime: parse_fact_list(sp).map_err(bad)?.into_iter().collect(),
            }
        }
        other => return Err(bad(format!("unknown mode {other}"))),
    };
    let opts = Options {
        bound: None,
        endogenous_only,
        experimental,
    };
    let cfg = Config::default();
    let report = fgmc_via_shapley(&query.inner, &mode, &db.inner, &opts, |q, d, f| match &oracle {
        None => shapley_subsets(&QueryGame::new(q.clone(), d.clone()), f, &cfg),
        Some(call) => {
            let db = Database::from_trace(&d.to_text()).map_err(|e| Error::Oracle(e.to_string()))?;
            let q = Query { inner: q.clone() };
            let out = call
                .call1((q, db, f.to_string()))
                .and_then(|v| to_rational(&v))
                .map_err(|e| Error::Oracle(e.to_string()))?;
            Ok(out)
        }
    })
    .map_err(err)?;
    Ok(report.vector.0)
}

/// Runs the invariant suites; returns the JSON report as a dict.
#[pyfunction]
fn verify<'py>(py: Python<'py>, query: &Query, db: &Database) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| core_verify(&query.inner, &db.inner, &VerifyOptions::default()));
    py.import("json")?.call_method1("loads", (report.to_json().to_string(),))
}

#[pymodule]
fn shapval(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ShapvalError", py.get_type::<ShapvalError>())?;
    m.add("LimitError", py.get_type::<LimitError>())?;
    m.add_class::<Query>()?;
    m.add_class::<Database>()?;
    m.add_function(wrap_pyfunction!(shapley, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_all, m)?)?;
    m.add_function(wrap_pyfunction!(max_shapley, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_constants, m)?)?;
    m.add_function(wrap_pyfunction!(fgmc_vector, m)?)?;
    m.add_function(wrap_pyfunction!(gmc, m)?)?;
    m.add_function(wrap_pyfunction!(pqe, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
