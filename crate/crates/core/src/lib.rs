pub mod analysis;
pub mod asymptotic;
pub mod critical;
pub mod expr;
pub mod fibration;
pub mod oracle;
pub mod solve;
pub mod tangency;
pub mod value;
