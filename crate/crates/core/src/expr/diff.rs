use super::{BinOp, Expr, Func};

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        _ => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        _ => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        _ => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) => num(0.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match &b {
        _ if is_num(&b, 0.0) => num(1.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Binary(BinOp::Pow, Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => num(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn call(f: Func, arg: Expr) -> Expr {
    Expr::Call(f, vec![arg])
}

fn sgn_of(e: &Expr) -> Expr {
    call(Func::Sgn, e.clone())
}

pub(super) fn differentiate(e: &Expr, var: &str) -> Expr {
    if !e.depends_on(var) {
        return num(0.0);
    }
    match e {
        Expr::Num(_) => num(0.0),
        Expr::Var(v) => num(if v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(differentiate(a, var)),
        Expr::Binary(op, a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            let (da, db) = (differentiate(a, var), differentiate(b, var));
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b.clone()), mul(a.clone(), db)),
                BinOp::Div => div(sub(mul(da, b.clone()), mul(a.clone(), db)), pow(b.clone(), num(2.0))),
                BinOp::Pow => {
                    if !b.depends_on(var) {
                        // d(a^c) = c a^(c-1) a'
                        let c = b.clone();
                        let reduced = match &c {
                            Expr::Num(n) => num(n - 1.0),
                            _ => sub(c.clone(), num(1.0)),
                        };
                        mul(mul(c, pow(a.clone(), reduced)), da)
                    } else {
                        // d(a^b) = a^b (b' ln a + b a'/a)
                        let term = add(mul(db, call(Func::Log, a.clone())), div(mul(b.clone(), da), a.clone()));
                        mul(e.clone(), term)
                    }
                }
            }
        }
        Expr::Call(f, args) => {
            let a = &args[0];
            let da = differentiate(a, var);
            match f {
                Func::Sqrt => div(da, mul(num(2.0), call(Func::Sqrt, a.clone()))),
                Func::Exp => mul(call(Func::Exp, a.clone()), da),
                Func::Log => div(da, a.clone()),
                Func::Abs => mul(sgn_of(a), da),
                Func::Sgn => num(0.0),
                Func::Min | Func::Max => {
                    // min(a,b) = (a+b)/2 - |a-b|/2, max with a plus sign
                    let b = &args[1];
                    let db = differentiate(b, var);
                    let half_sum = mul(num(0.5), add(da.clone(), db.clone()));
                    let s = mul(num(0.5), mul(sgn_of(&sub(a.clone(), b.clone())), sub(da, db)));
                    if *f == Func::Max {
                        add(half_sum, s)
                    } else {
                        sub(half_sum, s)
                    }
                }
            }
        }
    }
}
