#pragma once

// Generated by scripts/gen_wada_table.py; do not edit by hand.
// G(snr) = ln E|z| - E ln|z| for z = gamma-amplitude speech + unit
// Gaussian noise mixed at snr dB, amplitude shape alpha = 0.4.

namespace mqtts::wada {

inline constexpr double kSnrMin = -20.0;
inline constexpr double kSnrMax = 100.0;
inline constexpr double kSnrStep = 1.0;
inline constexpr int kTableSize = 121;

inline constexpr double kGTable[kTableSize] = {
    0.409434700099, 0.409459495102, 0.409497615928, 0.409555846215,
    0.409644124780, 0.409776796423, 0.409974217324, 0.410264732151,
    0.410686991871, 0.411292510553, 0.412148269353, 0.413339080458,
    0.414969335247, 0.417163709490, 0.420066400570, 0.423838549372,
    0.428653656353, 0.434691027409, 0.442127552406, 0.451128386167,
    0.461837316825, 0.474367727019, 0.488795044846, 0.505151439230,
    0.523423258033, 0.543551382600, 0.565434337213, 0.588933704125,
    0.613881198692, 0.640086670340, 0.667346316634, 0.695450498366,
    0.724190697933, 0.753365331995, 0.782784290341, 0.812272202505,
    0.841670531275, 0.870838649210, 0.899654083476, 0.928012116171,
    0.955824918046, 0.983020366106, 1.009540674028, 1.035340935189,
    1.060387653433, 1.084657316403, 1.108135047748, 1.130813360006,
    1.152691021289, 1.173772038216, 1.194064754471, 1.213581060036,
    1.232335701571, 1.250345688631, 1.267629782978, 1.284208064128,
    1.300101561141, 1.315331942900, 1.329921259037, 1.343891724757,
    1.357265543345, 1.370064761264, 1.382311150214, 1.394026113268,
    1.405230610509, 1.415945101440, 1.426189501298, 1.435983149411,
    1.445344787117, 1.454292543902, 1.462843930230, 1.471015835868,
    1.478824532844, 1.486285681681, 1.493414340958, 1.500224978971,
    1.506731487089, 1.512947194682, 1.518884884867, 1.524556811122,
    1.529974714193, 1.535149839433, 1.540092954038, 1.544814364781,
    1.549323934344, 1.553631099079, 1.557744885206, 1.561673925262,
    1.565426473717, 1.569010422646, 1.572433316580, 1.575702366996,
    1.578824466353, 1.581806201645, 1.584653867373, 1.587373478678,
    1.589970781008, 1.592451266407, 1.594820180063, 1.597082533333,
    1.599243113533, 1.601306493811, 1.603277042589, 1.605158932648,
    1.606956149703, 1.608672500803, 1.610311622218, 1.611876987050,
    1.613371912505, 1.614799566842, 1.616162976029, 1.617465013568,
    1.618708489258, 1.619895989614, 1.621030048842, 1.622113071395,
    1.623147353662, 1.624135088770, 1.625078373165, 1.625979201219,
    1.626839489414,
};

}  // namespace mqtts::wada
