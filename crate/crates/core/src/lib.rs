pub mod basis;
pub mod binning;
pub mod error;
pub mod fda;
pub mod glam;
pub mod kernelcheck;
pub mod sandwich2d;
pub mod sim;
pub mod spectra;

#[cfg(test)]
mod testutil;
