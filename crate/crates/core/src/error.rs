use crate::query::QueryError;
use crate::relational::{Constant, DatabaseError, Fact};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("enumeration needs 2^{exponent} subsets but the budget is {budget}")]
    BudgetExceeded { exponent: usize, budget: u64 },
    #[error("no support of the query exists within word length {bound}")]
    NoSupport { bound: usize },
    #[error("query has more than {0} expansions within the word-length bound")]
    TooManyExpansions(usize),
    #[error("fact {0} is not endogenous")]
    NotEndogenous(Fact),
    #[error("constant {0} is not an endogenous constant")]
    NotEndogenousConstant(Constant),
    #[error("the game has no players")]
    NoPlayers,
    #[error("{what} supports at most {limit} players, got {n}")]
    TooManyPlayers {
        what: &'static str,
        n: usize,
        limit: usize,
    },
    #[error("probability must satisfy 0 < p < 1, got {0}")]
    ProbabilityOutOfRange(String),
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),
    #[error("construction invalid: {0}")]
    Construction(String),
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

impl Error {
    /// Limit and hypothesis failures, as opposed to bad input.
    pub fn is_limit(&self) -> bool {
        matches!(
            self,
            Error::BudgetExceeded { .. }
                | Error::NoSupport { .. }
                | Error::TooManyExpansions(_)
                | Error::TooManyPlayers { .. }
                | Error::Hypothesis(_)
                | Error::Construction(_)
                | Error::Oracle(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
