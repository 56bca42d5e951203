pub mod cem;
pub mod g2anet;
pub mod population;
pub mod replay;
pub mod solver;
pub mod wolpertinger;
