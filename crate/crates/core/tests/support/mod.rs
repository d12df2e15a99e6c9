pub mod oracle;
pub mod signals;
